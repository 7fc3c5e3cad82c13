"""Command-line driver: gen, solve, exact, oracle, stability, fuzz, audit, experiment."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import io
from .exact import exact_core_audit, exact_welfare_lp
from .experiment import render_svg, rows_to_csv, run_experiment
from .instances import (
    RoadSpec,
    gen_core_gap,
    gen_random,
    gen_road,
    gen_x3c,
    grid_graph,
    load_edge_csv,
    make_x3c_no,
    make_x3c_yes,
)
from .model import Instance, SharingRuleSpec, evaluate, normalize_instance
from .mwu import MwuConfig, practical_eta, solve_welfare
from .oracles import DualPrices, get_oracle
from .stability import (
    check_2_stability,
    greedy_cycle_canceling,
    greedy_matching,
    strategyproofness_fuzz,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_BAD_INPUT = 2
EXIT_SOLVER = 3


def _setup_logging() -> None:
    level = os.environ.get("EXCHANGE_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR))


def _load_instance(path: str) -> Instance:
    try:
        return io.load_instance(path)
    except (OSError, json.JSONDecodeError, io.SchemaError, ValueError) as exc:
        raise SystemExit(_fail(f"bad instance file: {exc}"))


def _fail(message: str, code: int = EXIT_BAD_INPUT) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _edges_from_args(args) -> tuple[tuple[int, int], ...]:
    if args.graph:
        return load_edge_csv(args.graph)
    width, height = (int(v) for v in args.grid.lower().split("x"))
    return grid_graph(width, height, seed=args.seed)


def cmd_gen(args) -> int:
    if args.kind == "x3c":
        spec = make_x3c_yes(args.m, args.k, args.seed) if args.yes else make_x3c_no(
            args.m, args.k, args.seed
        )
        instance = gen_x3c(spec)
    elif args.kind == "core-gap":
        instance = gen_core_gap(args.n)
    elif args.kind == "random":
        instance = gen_random(args.n, args.senders, args.model, args.seed, args.epsilon)
    else:  # road
        try:
            edges = _edges_from_args(args)
            instance = gen_road(RoadSpec(
                edges=edges, radius=args.radius, n_agents=args.agents,
                correlation=args.correlation, rho=args.rho, seed=args.seed,
            ))
        except (OSError, ValueError) as exc:
            return _fail(str(exc))
    io.dump_instance(instance, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


SHARING_CHOICES = ("shapley_exact", "shapley_sampled", "proportional_singleton", "proportional_size")


def _sharing_override(name: str, m: int, seed: int) -> SharingRuleSpec:
    if name.startswith("proportional"):
        return SharingRuleSpec(
            kind="proportional",
            weights="size" if name.endswith("size") else "singleton",
        )
    return SharingRuleSpec(kind=name, m=m, seed=seed)


def cmd_solve(args) -> int:
    instance = _load_instance(args.instance)
    if args.epsilon is not None or args.sharing is not None:
        sharing = instance.sharing
        if args.sharing is not None:
            sharing = _sharing_override(args.sharing, args.sharing_m, args.seed)
        try:
            instance = Instance(
                n=instance.n, allowed=instance.allowed, utility=instance.utility,
                sharing=sharing,
                epsilon=instance.epsilon if args.epsilon is None else args.epsilon,
                seed=instance.seed,
            )
        except ValueError as exc:
            return _fail(str(exc))
    try:
        instance, scale = normalize_instance(instance)
    except ValueError as exc:
        return _fail(str(exc))
    oracle = get_oracle(args.oracle, eps=args.oracle_eps)
    eta = args.eta
    if eta is None and args.max_iters <= 20000:
        eta = practical_eta(instance.n, args.max_iters)
    config = MwuConfig(
        delta=args.delta, max_iters=args.max_iters, eta_override=eta, seed=args.seed,
    )
    try:
        solution, report = solve_welfare(instance, config, oracle)
    except ValueError as exc:
        return _fail(str(exc))
    if args.trace:
        from .mwu import run_mwu

        run = run_mwu(instance, max(report.best_B, instance.epsilon), config, oracle, trace=True)
        with open(args.trace, "w", encoding="utf-8") as fh:
            for row in run.trace:
                fh.write(json.dumps(row) + "\n")
    io.dump_solution(solution, args.out)
    payload = io.report_to_json(report)
    payload["scale"] = scale
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"welfare {report.welfare:.9g} (normalized units; scale {scale:.9g})")
    if not report.feasible:
        return _fail("solver produced no feasible solution", EXIT_SOLVER)
    return EXIT_OK


def cmd_exact(args) -> int:
    instance = _load_instance(args.instance)
    try:
        solution, welfare = exact_welfare_lp(instance, relax_eps=args.relax_eps)
    except ValueError as exc:
        return _fail(str(exc))
    io.dump_solution(solution, args.out)
    print(f"welfare {welfare:.9g}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    instance = _load_instance(args.instance)
    try:
        q_map = {int(j): float(v) for j, v in json.loads(args.q).items()}
        prices = DualPrices(Q={
            (args.agent, j): q_map.get(j, 0.0) for j in instance.senders_of[args.agent]
        })
        oracle = get_oracle(args.oracle, eps=args.oracle_eps)
        result = oracle(instance, args.agent, prices)
    except (ValueError, json.JSONDecodeError) as exc:
        return _fail(str(exc))
    print(json.dumps({
        "chosen": sorted(result.chosen),
        "value": result.value,
        "y": None if result.y is None else {str(j): v for j, v in sorted(result.y.items())},
        "guesses": result.guesses,
    }, sort_keys=True))
    return EXIT_OK


def cmd_stability(args) -> int:
    instance = _load_instance(args.instance)
    if args.algorithm == "greedy_match":
        solution = greedy_matching(instance)
        cycles: list[list[int]] = []
    else:
        solution, cycles = greedy_cycle_canceling(instance)
    blocking = check_2_stability(instance, solution)
    report = evaluate(instance, solution)
    io.dump_solution(solution, args.out)
    print(json.dumps({
        "welfare": report.welfare,
        "blocking_pairs": [list(p) for p in blocking],
        "cycles": cycles,
    }, sort_keys=True))
    return EXIT_OK


def cmd_fuzz(args) -> int:
    instance = _load_instance(args.instance)
    violations = strategyproofness_fuzz(instance, args.algorithm, args.trials, args.seed)
    for v in violations:
        print(json.dumps({
            "agent": v["agent"],
            "misreport": {
                "kind": v["misreport"].kind,
                "factor": v["misreport"].factor,
                "hide_from": list(v["misreport"].hide_from),
            },
            "U_before": v["U_before"],
            "U_after": v["U_after"],
        }, sort_keys=True))
    print(f"{len(violations)} violations in {args.trials} trials")
    return EXIT_OK


def cmd_audit(args) -> int:
    instance = _load_instance(args.instance)
    try:
        solution = io.load_solution(args.solution)
    except (OSError, json.JSONDecodeError, io.SchemaError, ValueError) as exc:
        return _fail(f"bad solution file: {exc}")
    if solution.n != instance.n:
        return _fail("solution agent count does not match the instance")
    # audits run in the solver's normalized units, so epsilon means the same thing
    try:
        instance, _scale = normalize_instance(instance)
    except ValueError as exc:
        return _fail(str(exc))
    report = evaluate(instance, solution)
    blocking_pairs = check_2_stability(instance, solution)
    coalitions = []
    if args.coalitions > 0:
        try:
            coalitions = exact_core_audit(instance, solution, max_coalition=args.coalitions)
        except ValueError as exc:
            logger.warning("core audit skipped: %s", exc)
    fuzz = []
    if args.fuzz_trials > 0:
        fuzz = strategyproofness_fuzz(instance, args.fuzz_algorithm, args.fuzz_trials, args.seed)
    print(json.dumps({
        "welfare": report.welfare,
        "residuals": [float(v) for v in report.balance_residual],
        "feasible": report.feasible,
        "blocking_pairs": [list(p) for p in blocking_pairs],
        "blocking_coalitions": [[list(c), t] for c, t in coalitions],
        "fuzz_violations": [
            {"agent": v["agent"], "U_before": v["U_before"], "U_after": v["U_after"]}
            for v in fuzz
        ],
    }, sort_keys=True))
    if not report.feasible or fuzz:
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_experiment(args) -> int:
    try:
        edges = _edges_from_args(args)
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    rhos = tuple(float(v) for v in args.rho.split(","))
    modes = tuple(args.modes.split(","))
    try:
        rows = run_experiment(
            edges, args.replicates, modes=modes, rhos=rhos, seed=args.seed,
            n_agents=args.agents, radius=args.radius, max_iters=args.max_iters,
        )
    except ValueError as exc:
        return _fail(str(exc))
    csv_text = rows_to_csv(rows)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(csv_text)
    if args.svg:
        with open(args.svg, "w", encoding="utf-8") as fh:
            fh.write(render_svg(rows))
    print(f"wrote {args.out} ({len(rows)} rows)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="datex", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate an instance file")
    p.add_argument("--kind", choices=["x3c", "core-gap", "random", "road"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--yes", action="store_true", help="x3c: generate a yes-instance")
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--senders", type=int, default=3)
    p.add_argument("--model", choices=["symmetric", "table"], default="symmetric")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--graph", help="edge-list CSV (node_a,node_b)")
    p.add_argument("--grid", default="12x12", help="synthetic WxH lattice fallback")
    p.add_argument("--radius", type=int, default=8)
    p.add_argument("--agents", type=int, default=20)
    p.add_argument("--correlation", choices=["none", "random", "local"], default="none")
    p.add_argument("--rho", type=float, default=0.0)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("solve", help="run the MWU welfare solver")
    p.add_argument("instance")
    p.add_argument("--oracle", choices=["bruteforce", "bucketing", "knapsack", "continuous"],
                   default="bucketing")
    p.add_argument("--oracle-eps", type=float, default=0.1)
    p.add_argument("--epsilon", type=float, default=None, help="override balance slack")
    p.add_argument("--sharing", choices=SHARING_CHOICES, default=None,
                   help="override the instance's sharing rule")
    p.add_argument("--sharing-m", type=int, default=10)
    p.add_argument("--delta", type=float, default=1.0 / 3.0)
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", default=None, help="JSON-lines telemetry file")
    p.add_argument("--out", default="solution.json")
    p.add_argument("--report", default="report.json")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("exact", help="exact welfare LP on a small instance")
    p.add_argument("instance")
    p.add_argument("--relax-eps", type=float, default=0.0)
    p.add_argument("--out", default="solution.json")
    p.set_defaults(fn=cmd_exact)

    p = sub.add_parser("oracle", help="run one dual oracle call")
    p.add_argument("instance")
    p.add_argument("--agent", type=int, required=True)
    p.add_argument("--q", required=True,
                   help='JSON map sender -> price, e.g. \'{"1": 0.5}\'; unlisted senders get 0')
    p.add_argument("--oracle", choices=["bruteforce", "bucketing", "knapsack", "continuous"],
                   default="bruteforce")
    p.add_argument("--oracle-eps", type=float, default=0.1)
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("stability", help="greedy matching / cycle canceling + 2-stability check")
    p.add_argument("instance")
    p.add_argument("--algorithm", choices=["greedy_match", "cycle_cancel"], default="greedy_match")
    p.add_argument("--out", default="solution.json")
    p.set_defaults(fn=cmd_stability)

    p = sub.add_parser("fuzz", help="strategyproofness fuzzer")
    p.add_argument("instance")
    p.add_argument("--algorithm", choices=["greedy_match", "cycle_cancel"], default="cycle_cancel")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_fuzz)

    p = sub.add_parser("audit", help="evaluate a solution file against an instance")
    p.add_argument("instance")
    p.add_argument("solution")
    p.add_argument("--coalitions", type=int, default=0, help="max coalition size to audit")
    p.add_argument("--fuzz-trials", type=int, default=0, help="misreport fuzz trials (0 = skip)")
    p.add_argument("--fuzz-algorithm", choices=["greedy_match", "cycle_cancel"],
                   default="cycle_cancel")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_audit)

    p = sub.add_parser("experiment", help="road-network replicates: baseline/matching/MWU")
    p.add_argument("--graph", help="edge-list CSV")
    p.add_argument("--grid", default="12x12")
    p.add_argument("--replicates", type=int, default=5)
    p.add_argument("--modes", default="random,local")
    p.add_argument("--rho", default="0,0.25,0.5")
    p.add_argument("--agents", type=int, default=20)
    p.add_argument("--radius", type=int, default=8)
    p.add_argument("--max-iters", type=int, default=240)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="experiment.csv")
    p.add_argument("--svg", default=None)
    p.set_defaults(fn=cmd_experiment)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit as exc:  # argparse or guarded failures
        code = exc.code
        return code if isinstance(code, int) else EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())

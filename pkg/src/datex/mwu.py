"""Multiplicative-weights feasibility solver for the welfare LP, with B search."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .model import (
    EQ_TOL,
    ExchangeSolution,
    FracColumn,
    Instance,
    SolveReport,
    column_utility,
    evaluate,
    utility,
)
from .oracles import ConvexCost, DualPrices, OracleResult, OracleSpec, oracle_imbalance
from .sharing import column_shares

logger = logging.getLogger(__name__)


class RegretBoundError(AssertionError):
    """The logged multiplicative-weights regret inequality failed."""


@dataclass(frozen=True)
class ImbalanceSpec:
    """Budgets for compensated imbalance: sum g(delta) <= C, sum h(gamma) <= C'."""

    C: float = 0.0
    C_prime: float = 0.0
    g: ConvexCost = ConvexCost()
    h: ConvexCost = ConvexCost()


@dataclass
class MwuConfig:
    """Solver knobs.

    eps (balance slack) defaults to the instance epsilon; delta is the
    welfare-grid ratio (<= 1/3); max_iters caps the theoretical iteration
    count T = 32 n^2 alpha^2 ln(n) / eps^2; eta_override replaces the
    theoretical learning rate eps / (4 n alpha).
    """

    eps: float | None = None
    delta: float = 1.0 / 3.0
    max_iters: int = 20000
    eta_override: float | None = None
    seed: int = 0
    check_every: int = 25
    imbalance: ImbalanceSpec | None = None

    def __post_init__(self) -> None:
        if self.eps is not None and not (0.0 < self.eps < 1.0):
            raise ValueError("eps must lie in (0, 1)")
        if not (0.0 < self.delta <= 1.0 / 3.0):
            raise ValueError("delta must lie in (0, 1/3]")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")

    def resolved_eps(self, instance: Instance) -> float:
        return instance.epsilon if self.eps is None else self.eps


def practical_eta(n: int, iters: int) -> float:
    """Desk-scale learning rate sqrt(ln(rows)/T); the theoretical rate assumes
    the astronomically large theoretical T."""
    return min(0.5, math.sqrt(math.log(2 * n + 1) / max(iters, 1)))


def width(instance: Instance, eps: float, imbalance: ImbalanceSpec | None = None) -> float:
    """Row width rho: max additive constraint violation over the polytope."""
    rho = sum(utility(instance, i, instance.full_set(i)) for i in range(instance.n))
    if imbalance is not None:
        # slack variables enter the balance rows, widening them
        rho += imbalance.C ** (1.0 / imbalance.g.a) + imbalance.C_prime ** (1.0 / imbalance.h.a)
    # epsilon guard keeps |m| <= 1 exactly (b_i = -eps rows add eps/alpha)
    return rho + eps


def assemble_prices(instance: Instance, w: np.ndarray, B: float, alpha: float,
                    eps: float) -> tuple[np.ndarray, DualPrices, float]:
    """Normalize row weights and reduce p^T A to per-pair prices.

    Q_ij = p0 + (p+_i - p-_i) - (p+_j - p-_j), where p0 weights the welfare
    row and p+/p- the two balance rows; threshold is p.b / alpha.
    """
    if np.any(w <= 0):
        raise ValueError("row weights must stay positive")
    n = instance.n
    p = w / w.sum()
    net = p[1 : n + 1] - p[n + 1 : 2 * n + 1]
    q = {(i, j): float(p[0] + net[i] - net[j]) for i, j in instance.allowed}
    threshold = (p[0] * B - eps * (p[1:].sum())) / alpha
    return p, DualPrices(Q=q), float(threshold)


@dataclass
class MwuRun:
    feasible: bool
    solution: ExchangeSolution | None
    certified: bool
    iterations: int
    regret_lhs: float
    regret_rhs_min: float
    trace: list[dict] = field(default_factory=list)


def _averaged_solution(instance: Instance, counts: dict, t: int,
                       delta_sum: np.ndarray | None, gamma_sum: np.ndarray | None,
                       ) -> ExchangeSolution:
    cols: dict[int, dict] = {}
    for (i, col), c in counts.items():
        cols.setdefault(i, {})[col] = c / t
    deltas = None if delta_sum is None else delta_sum / t
    gammas = None if gamma_sum is None else gamma_sum / t
    return ExchangeSolution(n=instance.n, columns=cols, deltas=deltas, gammas=gammas)


def run_mwu(instance: Instance, B: float, config: MwuConfig, oracle: OracleSpec,
            trace: bool = False) -> MwuRun:
    """One feasibility run of the weight-update loop at welfare target B."""
    n = instance.n
    eps = config.resolved_eps(instance)
    if B < eps - EQ_TOL:
        raise ValueError("welfare targets below eps are never needed (OPT >= eps)")
    alpha = oracle.alpha(instance)
    rho = max(width(instance, eps, config.imbalance), B)
    eta = config.eta_override
    log_n = math.log(max(n, 2))
    t_theory = math.ceil(32.0 * n * n * alpha * alpha * log_n / (eps * eps))
    iters = min(t_theory, config.max_iters)
    if eta is None:
        eta = eps / (4.0 * n * alpha)
    if not (0.0 < eta <= 0.5):
        raise ValueError("eta must lie in (0, 1/2]")
    # regret constant: 2 ln n only dominates ln(2n+1) for n >= 3; use the
    # exact expert count below that so the audited inequality is sound
    reg_const = max(2.0 * log_n, math.log(2 * n + 1))

    w = np.ones(2 * n + 1)
    counts: dict[tuple[int, object], int] = {}
    delta_sum = np.zeros(n) if config.imbalance else None
    gamma_sum = np.zeros(n) if config.imbalance else None
    lhs = 0.0
    row_m_sum = np.zeros(2 * n + 1)
    row_m_abs = np.zeros(2 * n + 1)
    rows: list[dict] = []
    feasible = True
    certified = False
    final_solution: ExchangeSolution | None = None
    t_done = 0

    for t in range(1, iters + 1):
        p, prices, threshold = assemble_prices(instance, w, B, alpha, eps)

        received = np.zeros(n)
        sent = np.zeros(n)
        oracle_total = 0.0
        chosen_cols: list[tuple[int, object]] = []
        for i in range(n):
            res: OracleResult = oracle(instance, i, prices)
            if res.value <= 0.0 or not res.chosen:
                continue
            col: object
            if res.y is not None and any(frac < 1.0 - EQ_TOL for frac in res.y.values()):
                col = FracColumn(y=tuple(sorted(res.y.items())))
            else:
                col = res.chosen
            chosen_cols.append((i, col))
            oracle_total += res.value
            received[i] += column_utility(instance, i, col)
            for j, h in column_shares(instance, i, col).items():
                sent[j] += h

        delta = gamma = None
        if config.imbalance is not None:
            net_p = p[1 : n + 1]
            net_r = p[n + 1 : 2 * n + 1]
            delta, gamma, imb_value = oracle_imbalance(
                net_p, net_r, config.imbalance.C, config.imbalance.C_prime,
                config.imbalance.g, config.imbalance.h,
            )
            oracle_total += imb_value

        if oracle_total < threshold:
            feasible = False
            t_done = t - 1
            if trace:
                rows.append({"t": t, "B": B, "pb_threshold": threshold,
                             "oracle_value": oracle_total, "max_residual": float("nan")})
            break

        # m = (A x - b/alpha) / rho for the 2n+1 rows
        balance = received - sent
        if delta is not None:
            plus_rows = balance + delta + eps / alpha
            minus_rows = -balance + gamma + eps / alpha
        else:
            plus_rows = balance + eps / alpha
            minus_rows = -balance + eps / alpha
        m = np.concatenate(([received.sum() - B / alpha], plus_rows, minus_rows)) / rho
        if np.max(np.abs(m)) > 1.0 + 1e-12:
            raise AssertionError(f"width violated: |m| = {np.max(np.abs(m)):.6g} > 1")
        lhs += float(p @ m)
        row_m_sum += m
        row_m_abs += np.abs(m)
        w = w * (1.0 - eta * m)
        if np.any(w <= 0):
            raise AssertionError("row weight became non-positive")

        for i, col in chosen_cols:
            counts[(i, col)] = counts.get((i, col), 0) + 1
        if delta is not None:
            delta_sum += delta
            gamma_sum += gamma
        t_done = t

        if trace:
            rows.append({"t": t, "B": B, "pb_threshold": threshold,
                         "oracle_value": oracle_total,
                         "max_residual": float(np.max(np.abs(balance)))})

        if t % config.check_every == 0 or t == iters:
            avg = _averaged_solution(instance, counts, t, delta_sum, gamma_sum)
            target = B / alpha - eps / (2.0 * alpha) - EQ_TOL
            rep = evaluate(instance, avg)
            slack_lo = np.zeros(n) if avg.deltas is None else np.asarray(avg.deltas)
            slack_hi = np.zeros(n) if avg.gammas is None else np.asarray(avg.gammas)
            balanced = bool(
                np.all(rep.balance_residual >= -eps - slack_lo - EQ_TOL)
                and np.all(rep.balance_residual <= eps + slack_hi + EQ_TOL)
            )
            if balanced and rep.welfare >= target:
                certified = True
                break
            # the raw average converges slowly at desk scale; the exact LP over
            # the generated columns certifies the same feasibility level early
            if abs(eps - instance.epsilon) <= EQ_TOL and avg.column_count() <= 5000:
                cleaned = sparsify(instance, avg)
                rep_c = evaluate(instance, cleaned)
                if rep_c.feasible and rep_c.welfare >= target:
                    certified = True
                    final_solution = cleaned
                    break

    rhs = row_m_sum + eta * row_m_abs + reg_const / eta
    rhs_min = float(rhs.min())
    if t_done > 0 and lhs > rhs_min + 1e-6:
        raise RegretBoundError(
            f"regret bound violated: lhs {lhs:.6g} > rhs {rhs_min:.6g} at B={B:.6g}"
        )

    solution = None
    if feasible:
        if final_solution is not None:
            solution = final_solution
        elif t_done > 0:
            solution = _averaged_solution(instance, counts, t_done, delta_sum, gamma_sum)
        else:
            solution = ExchangeSolution.empty(n)
    return MwuRun(
        feasible=feasible,
        solution=solution,
        certified=certified,
        iterations=t_done,
        regret_lhs=lhs,
        regret_rhs_min=rhs_min,
        trace=rows,
    )


def mwu_feasibility(instance: Instance, B: float, config: MwuConfig,
                    oracle: OracleSpec) -> tuple[bool, ExchangeSolution | None]:
    """Feasibility of LP1(B, eps): (feasible, averaged solution when feasible)."""
    run = run_mwu(instance, B, config, oracle)
    return run.feasible, run.solution


def sparsify(instance: Instance, solution: ExchangeSolution) -> ExchangeSolution:
    """Re-optimize weights over the solution's own columns by exact LP.

    Maximizes welfare subject to the probability and eps-balance rows, so the
    output has at most 2n+1 active columns and residuals within epsilon
    (widened by the solution's fixed delta/gamma slacks).
    """
    merged: dict[tuple[int, object], float] = {}
    for i, col, x in solution.iter_columns():
        merged[(i, col)] = merged.get((i, col), 0.0) + x
    cols = list(merged)
    if len(cols) > 5000:
        raise ValueError(f"{len(cols)} columns exceed the sparsify bound")
    if not cols:
        return solution
    n = instance.n
    eps = instance.epsilon
    util = np.zeros(len(cols))
    mass = np.zeros((n, len(cols)))
    resid = np.zeros((n, len(cols)))
    for c, (i, col) in enumerate(cols):
        util[c] = column_utility(instance, i, col)
        mass[i, c] = 1.0
        resid[i, c] += util[c]
        for j, h in column_shares(instance, i, col).items():
            resid[j, c] -= h
    hi = np.full(n, eps)
    lo = np.full(n, eps)
    if solution.gammas is not None:
        hi = hi + np.asarray(solution.gammas)
    if solution.deltas is not None:
        lo = lo + np.asarray(solution.deltas)
    a_ub = np.vstack([mass, resid, -resid])
    b_ub = np.concatenate([np.ones(n), hi, lo])
    res = linprog(-util, A_ub=a_ub, b_ub=b_ub, bounds=(0, None), method="highs-ds")
    if not res.success:
        logger.warning("sparsify LP failed (%s); returning input unchanged", res.message)
        return solution
    out: dict[int, dict] = {}
    active = 0
    for c, x in enumerate(res.x):
        if x > 1e-12:
            i, col = cols[c]
            out.setdefault(i, {})[col] = float(min(x, 1.0))
            active += 1
    if active > 2 * n + 1:
        raise AssertionError(f"sparsify returned {active} > 2n+1 active columns")
    return ExchangeSolution(n=n, columns=out, deltas=solution.deltas, gammas=solution.gammas)


def solve_welfare(instance: Instance, config: MwuConfig, oracle: OracleSpec,
                  ) -> tuple[ExchangeSolution, SolveReport]:
    """Search welfare targets B on the (1+delta) grid and keep the largest feasible.

    The returned solution is the column-LP cleanup of the best run's average;
    its residuals are within epsilon by construction.
    """
    n = instance.n
    eps = config.resolved_eps(instance)
    peak = max((utility(instance, i, instance.full_set(i)) for i in range(n)), default=0.0)
    if peak <= 0.0:
        report = evaluate(instance, ExchangeSolution.empty(n))
        report.caveats.append("no positive utilities; nothing to trade")
        return ExchangeSolution.empty(n), report
    if peak > 1.0 + 1e-6:
        raise ValueError("solve_welfare needs a normalized instance (max utility 1)")

    alpha = oracle.alpha(instance)
    rho = sum(utility(instance, i, instance.full_set(i)) for i in range(n))
    grid_len = max(1, 1 + math.ceil(math.log(max(rho / eps, 1.0)) / math.log(1.0 + config.delta)))
    grid = [eps * (1.0 + config.delta) ** k for k in range(grid_len)]

    total_iters = 0
    best: tuple[float, MwuRun] | None = None

    def probe(k: int) -> bool:
        nonlocal total_iters, best
        run = run_mwu(instance, grid[k], config, oracle)
        total_iters += run.iterations
        if run.feasible and run.solution is not None:
            if best is None or grid[k] > best[0]:
                best = (grid[k], run)
            return True
        return False

    if not probe(0):
        report = evaluate(instance, ExchangeSolution.empty(n), iterations=total_iters)
        report.caveats.append(
            "MWU declared every welfare target infeasible (one-sided test); no solution"
        )
        return ExchangeSolution.empty(n), report

    # exponential probing on grid indices, then bisection between the last
    # feasible and first infeasible index
    lo, hi = 0, None
    step = 1
    while hi is None:
        k = lo + step
        if k >= grid_len:
            if lo == grid_len - 1:
                break
            k = grid_len - 1
        if probe(k):
            lo = k
            if k == grid_len - 1:
                break
            step *= 2
        else:
            hi = k
    if hi is not None:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            lo, hi = (mid, hi) if probe(mid) else (lo, mid)

    assert best is not None
    best_b, best_run = best
    solution = best_run.solution
    assert solution is not None
    if solution.column_count() <= 5000:
        solution = sparsify(instance, solution)
    report = evaluate(instance, solution, iterations=total_iters, best_B=best_b)
    report.guarantee = best_b / (2.0 * alpha * (1.0 + 3.0 * config.delta))
    if not best_run.certified:
        report.caveats.append(
            "iteration cap reached before the running average certified the target"
        )
    report.caveats.append("MWU infeasibility is one-sided; B search treats it as 'too high'")
    return solution, report

"""Greedy matching, cycle canceling, tradeoff mixing, and the misreport harness."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .model import (
    EQ_TOL,
    ContinuousConcave,
    ExchangeSolution,
    ExplicitTable,
    Instance,
    SymmetricWeighted,
    evaluate,
    utility,
)


def pairwise_utilities(instance: Instance) -> dict[tuple[int, int], float]:
    """u_ij = u_i({j}) for every permitted ordered pair."""
    return {
        (i, j): utility(instance, i, frozenset({j}))
        for i, j in sorted(instance.allowed)
    }


def symmetric_pair_weights(instance: Instance) -> dict[tuple[int, int], float]:
    """u-hat over unordered pairs with both directions permitted: min of the two."""
    u = pairwise_utilities(instance)
    out = {}
    for i, j in u:
        if i < j and (j, i) in u:
            out[(i, j)] = min(u[(i, j)], u[(j, i)])
    return out


def greedy_matching(instance: Instance) -> ExchangeSolution:
    """Greedy maximal-weight matching on u-hat; each matched pair trades to balance.

    x_i({j}) = min(1, u_ji / u_ij), so both partners receive exactly u-hat.
    """
    u = pairwise_utilities(instance)
    u_hat = symmetric_pair_weights(instance)
    order = sorted(u_hat, key=lambda p: (-u_hat[p], p))
    matched: set[int] = set()
    cols: dict[int, dict] = {}
    for i, j in order:
        if u_hat[(i, j)] <= 0.0 or i in matched or j in matched:
            continue
        matched.update((i, j))
        cols[i] = {frozenset({j}): min(1.0, u[(j, i)] / u[(i, j)])}
        cols[j] = {frozenset({i}): min(1.0, u[(i, j)] / u[(j, i)])}
    return ExchangeSolution(n=instance.n, columns=cols)


def check_2_stability(instance: Instance, solution: ExchangeSolution,
                      ) -> list[tuple[int, int]]:
    """Pairs (i, j) whose mutual trade beats both agents' current utilities."""
    u_hat = symmetric_pair_weights(instance)
    current = evaluate(instance, solution).per_agent_utility
    return [
        (i, j)
        for (i, j), w in sorted(u_hat.items())
        if w > current[i] + EQ_TOL and w > current[j] + EQ_TOL
    ]


# ---------------------------------------------------------------------------
# Greedy cycle canceling
# ---------------------------------------------------------------------------


def _directed_trade_edges(instance: Instance, active: set[int]) -> dict[tuple[int, int], float]:
    """Edges sender->receiver with weight u_receiver({sender}); zero-utility dropped."""
    out = {}
    for (i, j) in instance.allowed:  # i receives from j
        if i in active and j in active:
            w = utility(instance, i, frozenset({j}))
            if w > 0.0:
                out[(j, i)] = w
    return out


def _has_cycle(nodes: set[int], edges: set[tuple[int, int]]) -> bool:
    adj: dict[int, list[int]] = {v: [] for v in nodes}
    indeg = {v: 0 for v in nodes}
    for a, b in edges:
        adj[a].append(b)
        indeg[b] += 1
    queue = deque(v for v in nodes if indeg[v] == 0)
    seen = 0
    while queue:
        v = queue.popleft()
        seen += 1
        for w in adj[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
    return seen < len(nodes)


def _shortest_lex_cycle(nodes: set[int], edges: set[tuple[int, int]]) -> list[int]:
    """Shortest directed cycle; ties broken by lexicographically smallest sequence."""
    adj: dict[int, list[int]] = {v: [] for v in nodes}
    radj: dict[int, list[int]] = {v: [] for v in nodes}
    for a, b in edges:
        adj[a].append(b)
        radj[b].append(a)
    for v in nodes:
        adj[v].sort()
        radj[v].sort()

    def bfs(start: int, graph: dict[int, list[int]]) -> dict[int, int]:
        dist = {start: 0}
        queue = deque([start])
        while queue:
            v = queue.popleft()
            for w in graph[v]:
                if w not in dist:
                    dist[w] = dist[v] + 1
                    queue.append(w)
        return dist

    best_len = None
    best_start = None
    starts = {}
    for s in sorted(nodes):
        dist = bfs(s, adj)
        back = [dist[a] + 1 for (a, b) in edges if b == s and a in dist]
        if back:
            length = min(back)
            starts[s] = (length, dist)
            if best_len is None or length < best_len:
                best_len, best_start = length, s
    assert best_len is not None and best_start is not None

    length, _ = starts[best_start]
    dist_to_start = bfs(best_start, radj)  # distance v -> start along edges

    # DFS in ascending neighbor order, pruned by the remaining distance to
    # close the cycle; the first complete cycle is lexicographically smallest.
    def extend(path: list[int]) -> list[int] | None:
        v = path[-1]
        if len(path) == length:
            return path if best_start in adj[v] else None
        for w in adj[v]:
            if w == best_start or w in path:
                continue
            if len(path) + dist_to_start.get(w, 10**9) > length:
                continue
            found = extend(path + [w])
            if found:
                return found
        return None

    cycle = extend([best_start])
    assert cycle is not None
    return cycle


def greedy_cycle_canceling(instance: Instance) -> tuple[ExchangeSolution, list[list[int]]]:
    """Repeatedly trade along the bottleneck-max directed cycle, then delete it.

    Cycle value u_C is the minimum single-hop utility along the cycle; the hop
    weights x make every member receive exactly u_C, so balance is exact.
    """
    active = set(range(instance.n))
    cols: dict[int, dict] = {}
    cycles: list[list[int]] = []
    while True:
        edge_w = _directed_trade_edges(instance, active)
        if not edge_w:
            break
        weights = sorted(set(edge_w.values()))
        # binary search the largest threshold keeping some directed cycle
        lo, hi = 0, len(weights) - 1
        if not _has_cycle(active, set(edge_w)):
            break
        best_tau = None
        while lo <= hi:
            mid = (lo + hi) // 2
            kept = {e for e, w in edge_w.items() if w >= weights[mid]}
            if _has_cycle(active, kept):
                best_tau = weights[mid]
                lo = mid + 1
            else:
                hi = mid - 1
        assert best_tau is not None
        kept = {e for e, w in edge_w.items() if w >= best_tau}
        cycle = _shortest_lex_cycle(active, kept)
        u_c = min(edge_w[(cycle[t], cycle[(t + 1) % len(cycle)])] for t in range(len(cycle)))
        for t in range(len(cycle)):
            sender = cycle[t]
            receiver = cycle[(t + 1) % len(cycle)]
            cols[receiver] = {frozenset({sender}): u_c / edge_w[(sender, receiver)]}
        # canonical rotation: start at the smallest member
        k = cycle.index(min(cycle))
        cycles.append(cycle[k:] + cycle[:k])
        active -= set(cycle)
    return ExchangeSolution(n=instance.n, columns=cols), cycles


# ---------------------------------------------------------------------------
# Welfare / core tradeoff mixing
# ---------------------------------------------------------------------------


def mix_solutions(first: ExchangeSolution, second: ExchangeSolution,
                  beta: float) -> ExchangeSolution:
    """z = beta * first + (1 - beta) * second, column-wise."""
    if not (0.0 <= beta <= 1.0):
        raise ValueError("beta must lie in [0, 1]")
    if first.n != second.n:
        raise ValueError("solutions built on different instances")
    cols: dict[int, dict] = {}
    for sol, coef in ((first, beta), (second, 1.0 - beta)):
        if coef == 0.0:
            continue
        for i, col, x in sol.iter_columns():
            agent = cols.setdefault(i, {})
            agent[col] = agent.get(col, 0.0) + coef * x

    def mix_slack(a: np.ndarray | None, b: np.ndarray | None) -> np.ndarray | None:
        if a is None and b is None:
            return None
        av = np.zeros(first.n) if a is None else np.asarray(a)
        bv = np.zeros(first.n) if b is None else np.asarray(b)
        return beta * av + (1.0 - beta) * bv

    return ExchangeSolution(
        n=first.n, columns=cols,
        deltas=mix_slack(first.deltas, second.deltas),
        gammas=mix_slack(first.gammas, second.gammas),
    )


# ---------------------------------------------------------------------------
# Strategic misreports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Misreport:
    """A feasible understatement by one agent.

    kind 'scale' multiplies the agent's own utility by factor <= 1 (hiding
    tasks); kind 'hide' withholds the agent's data from the listed receivers
    (their utilities drop accordingly).
    """

    agent: int
    kind: str  # scale | hide
    factor: float = 1.0
    hide_from: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("scale", "hide"):
            raise ValueError(f"unknown misreport kind {self.kind!r}")
        if self.kind == "scale" and not (0.0 <= self.factor <= 1.0):
            raise ValueError(
                "condition 1 violated: reported utility must not exceed the true utility"
            )


def _scaled_table(model: ExplicitTable, agent: int, factor: float) -> ExplicitTable:
    values = tuple(
        v * factor if i == agent else v.copy() for i, v in enumerate(model.values)
    )
    return ExplicitTable(model.senders, values)


def _hidden_table(model: ExplicitTable, agent: int, hide_from: tuple[int, ...],
                  ) -> ExplicitTable:
    values = []
    for i, vals in enumerate(model.values):
        if i not in hide_from:
            values.append(vals.copy())
            continue
        senders = model.senders[i]
        if agent not in senders:
            values.append(vals.copy())
            continue
        bit = 1 << senders.index(agent)
        new_vals = vals.copy()
        for mask in range(len(vals)):
            if mask & bit:
                new_vals[mask] = vals[mask ^ bit]  # i's utility ignores agent's data
        values.append(new_vals)
    return ExplicitTable(model.senders, values)


def apply_misreport(instance: Instance, mis: Misreport) -> Instance:
    """The instance induced by a feasible misreport (reported utilities/shares)."""
    if not (0 <= mis.agent < instance.n):
        raise ValueError(f"unknown agent {mis.agent}")
    model = instance.utility
    if mis.kind == "scale":
        if mis.factor == 1.0:
            return instance
        if isinstance(model, ExplicitTable):
            new_model = _scaled_table(model, mis.agent, mis.factor)
        elif isinstance(model, (SymmetricWeighted, ContinuousConcave)):
            f = tuple(
                fi.rescaled(1.0 / mis.factor) if i == mis.agent else fi
                for i, fi in enumerate(model.f)
            )
            new_model = replace(model, f=f)
        else:
            raise ValueError(f"misreports are not modeled for {model.kind}")
    else:
        receivers = instance.receivers_of[mis.agent]
        bad = [j for j in mis.hide_from if j not in receivers]
        if bad:
            raise ValueError(
                f"condition 3 violated: agents {bad} never receive from {mis.agent}"
            )
        if not mis.hide_from:
            return instance
        if isinstance(model, ExplicitTable):
            new_model = _hidden_table(model, mis.agent, mis.hide_from)
        elif isinstance(model, (SymmetricWeighted, ContinuousConcave)):
            sizes = {
                (i, j): (0.0 if j == mis.agent and i in mis.hide_from else s)
                for (i, j), s in model.sizes.items()
            }
            new_model = replace(model, sizes=sizes)
        else:
            raise ValueError(f"misreports are not modeled for {model.kind}")
    return Instance(
        n=instance.n, allowed=instance.allowed, utility=new_model,
        sharing=instance.sharing, epsilon=instance.epsilon, seed=instance.seed,
    )


def _perceived_utility(reported: Instance, solution: ExchangeSolution, agent: int) -> float:
    return float(evaluate(reported, solution).per_agent_utility[agent])


def sample_misreport(instance: Instance, agent: int, rng: np.random.Generator) -> Misreport:
    receivers = instance.receivers_of[agent]
    if receivers and rng.random() < 0.5:
        count = int(rng.integers(1, len(receivers) + 1))
        hide = tuple(sorted(int(x) for x in rng.choice(receivers, size=count, replace=False)))
        return Misreport(agent=agent, kind="hide", hide_from=hide)
    return Misreport(agent=agent, kind="scale", factor=float(rng.uniform(0.0, 1.0)))


def strategyproofness_fuzz(instance: Instance, algorithm: str, trials: int,
                           seed: int = 0) -> list[dict]:
    """Random feasible misreports; flag any that raise the misreporter's utility.

    The misreporter's perceived utility is measured with its reported utility
    function on the algorithm's output for the reported instance.
    """
    runners = {
        "cycle_cancel": lambda inst: greedy_cycle_canceling(inst)[0],
        "greedy_match": greedy_matching,
    }
    if algorithm not in runners:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    run = runners[algorithm]
    truthful = evaluate(instance, run(instance)).per_agent_utility
    rng = np.random.default_rng(seed)
    violations = []
    for _ in range(trials):
        agent = int(rng.integers(0, instance.n))
        mis = sample_misreport(instance, agent, rng)
        reported = apply_misreport(instance, mis)
        perceived = _perceived_utility(reported, run(reported), agent)
        if perceived > truthful[agent] + EQ_TOL:
            violations.append({
                "agent": agent,
                "misreport": mis,
                "U_before": float(truthful[agent]),
                "U_after": perceived,
            })
    return violations

"""Ground-truth solvers on small instances: full-column welfare LP, core audits."""

from __future__ import annotations

import itertools
import logging

import numpy as np
from scipy.optimize import linprog

from .model import ExchangeSolution, Instance, evaluate, utility
from .sharing import shares

logger = logging.getLogger(__name__)

MAX_LP_SENDERS = 12
MAX_COALITIONS = 5000


def _agent_columns(instance: Instance, i: int, within: frozenset[int] | None = None,
                   ) -> list[frozenset[int]]:
    senders = [j for j in instance.senders_of[i] if within is None or j in within]
    cols = []
    for size in range(1, len(senders) + 1):
        cols.extend(frozenset(c) for c in itertools.combinations(senders, size))
    return cols


def exact_welfare_lp(instance: Instance, relax_eps: float = 0.0,
                     ) -> tuple[ExchangeSolution, float]:
    """Maximize welfare over the fully enumerated column set by exact LP.

    relax_eps = 0 enforces exact balance; otherwise residuals are bounded by
    relax_eps on both sides.
    """
    n = instance.n
    for i in range(n):
        if len(instance.senders_of[i]) > MAX_LP_SENDERS:
            raise ValueError(f"agent {i} has too many senders for full enumeration")
    cols: list[tuple[int, frozenset[int]]] = []
    for i in range(n):
        cols.extend((i, s) for s in _agent_columns(instance, i))
    if not cols:
        return ExchangeSolution.empty(n), 0.0

    util = np.zeros(len(cols))
    mass = np.zeros((n, len(cols)))
    resid = np.zeros((n, len(cols)))
    for c, (i, subset) in enumerate(cols):
        util[c] = utility(instance, i, subset)
        mass[i, c] = 1.0
        resid[i, c] += util[c]
        for j, h in shares(instance, i, subset).items():
            resid[j, c] -= h

    if relax_eps <= 0.0:
        res = linprog(
            -util, A_ub=mass, b_ub=np.ones(n), A_eq=resid, b_eq=np.zeros(n),
            bounds=(0, None), method="highs-ds",
        )
    else:
        a_ub = np.vstack([mass, resid, -resid])
        b_ub = np.concatenate([np.ones(n), np.full(n, relax_eps), np.full(n, relax_eps)])
        res = linprog(-util, A_ub=a_ub, b_ub=b_ub, bounds=(0, None), method="highs-ds")
    if not res.success:
        raise RuntimeError(f"exact welfare LP failed: {res.message}")

    out: dict[int, dict] = {}
    active = 0
    for c, x in enumerate(res.x):
        if x > 1e-12:
            i, subset = cols[c]
            out.setdefault(i, {})[subset] = float(min(x, 1.0))
            active += 1
    if active > 2 * n + 1:
        raise AssertionError(f"LP optimum has {active} > 2n+1 nonzero columns")
    return ExchangeSolution(n=n, columns=out), float(-res.fun)


def _coalition_best_margin(instance: Instance, coalition: tuple[int, ...],
                           targets: np.ndarray) -> float:
    """max t s.t. a balanced sub-solution on the coalition gives every member
    utility >= target + t; -inf when some member cannot reach its target."""
    within = frozenset(coalition)
    cols: list[tuple[int, frozenset[int]]] = []
    for i in coalition:
        cols.extend((i, s) for s in _agent_columns(instance, i, within))
    idx = {i: r for r, i in enumerate(coalition)}
    k = len(coalition)
    if not cols:
        # only the empty solution exists on this coalition
        return float(-targets.max())

    util = np.zeros(len(cols))
    mass = np.zeros((k, len(cols)))
    resid = np.zeros((k, len(cols)))
    gain = np.zeros((k, len(cols)))
    for c, (i, subset) in enumerate(cols):
        util[c] = utility(instance, i, subset)
        mass[idx[i], c] = 1.0
        resid[idx[i], c] += util[c]
        gain[idx[i], c] = util[c]
        for j, h in shares(instance, i, subset).items():
            resid[idx[j], c] -= h

    # variables: column weights then t; maximize t
    n_var = len(cols) + 1
    cost = np.zeros(n_var)
    cost[-1] = -1.0
    a_ub = np.zeros((2 * k, n_var))
    b_ub = np.zeros(2 * k)
    a_ub[:k, : len(cols)] = mass
    b_ub[:k] = 1.0
    a_ub[k:, : len(cols)] = -gain  # t - gain_i <= -target_i
    a_ub[k:, -1] = 1.0
    b_ub[k:] = -targets
    a_eq = np.zeros((k, n_var))
    a_eq[:, : len(cols)] = resid
    bounds = [(0, None)] * len(cols) + [(None, None)]
    res = linprog(cost, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=np.zeros(k),
                  bounds=bounds, method="highs")
    if not res.success:
        logger.warning("coalition LP failed for %s: %s", coalition, res.message)
        return -float("inf")
    return float(res.x[-1])


def exact_core_audit(instance: Instance, solution: ExchangeSolution,
                     max_coalition: int = 3, margin: float = 1e-7,
                     factor: float = 1.0) -> list[tuple[tuple[int, ...], float]]:
    """Enumerate coalitions up to max_coalition; return the blocking ones.

    A coalition blocks when a balanced sub-solution on it gives every member
    utility > factor * current + margin (factor 1 is the plain core test;
    factor 1/(1-beta) checks the mixing tradeoff accounting).
    """
    n = instance.n
    current = evaluate(instance, solution).per_agent_utility
    total = sum(
        1 for size in range(2, max_coalition + 1) for _ in itertools.combinations(range(n), size)
    )
    if total > MAX_COALITIONS:
        raise ValueError(f"{total} coalitions exceed the audit bound {MAX_COALITIONS}")
    blocking = []
    for size in range(2, max_coalition + 1):
        for coalition in itertools.combinations(range(n), size):
            targets = np.array([factor * current[i] for i in coalition])
            t_star = _coalition_best_margin(instance, coalition, targets)
            if t_star > margin:
                blocking.append((coalition, t_star))
    return sorted(blocking)

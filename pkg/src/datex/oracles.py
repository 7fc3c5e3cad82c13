"""Approximate maximizers of the per-agent dual subproblem max_S sum_j Q_ij h_ij(S)."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    ContinuousConcave,
    Instance,
    MAX_ENUMERABLE_SENDERS,
    SymmetricWeighted,
    utility,
)
from .sharing import shares

logger = logging.getLogger(__name__)

SIZE_FIXED_POINT = 10**6  # knapsack capacities compared as 6-digit fixed point


@dataclass(frozen=True)
class DualPrices:
    """Per-ordered-pair weights Q_ij assembled from the MWU row weights."""

    Q: dict[tuple[int, int], float]

    def q(self, i: int, j: int) -> float:
        return self.Q[(i, j)]


@dataclass
class OracleResult:
    chosen: frozenset[int]
    value: float
    y: dict[int, float] | None = None  # fractional vector (continuous oracle only)
    guesses: int = 0


def oracle_value(instance: Instance, i: int, prices: DualPrices, subset: frozenset[int]) -> float:
    """Recompute sum_j Q_ij h_ij(subset)."""
    return sum(prices.q(i, j) * h for j, h in shares(instance, i, subset).items())


_EMPTY = frozenset()


def oracle_bruteforce(instance: Instance, i: int, prices: DualPrices) -> OracleResult:
    """Exact argmax over all subsets of permitted senders (exactness baseline)."""
    senders = instance.senders_of[i]
    if len(senders) > MAX_ENUMERABLE_SENDERS:
        raise ValueError(f"{len(senders)} senders too many for brute force")
    best_set, best_val = _EMPTY, 0.0
    for mask in range(1, 1 << len(senders)):
        subset = frozenset(senders[b] for b in range(len(senders)) if mask & (1 << b))
        val = oracle_value(instance, i, prices, subset)
        if val > best_val:
            best_set, best_val = subset, val
    return OracleResult(chosen=best_set, value=best_val, guesses=1 << len(senders))


def bucketing_alpha(n: int, eps: float) -> float:
    """Approximation factor certified by the bucketing oracle."""
    return max(1.0, 3.0 * math.e * (1.0 + 3.0 * eps) * math.log(max(n, 2)))


def oracle_bucketing(instance: Instance, i: int, prices: DualPrices, eps: float = 0.1) -> OracleResult:
    """Bucket senders by price level and return the best whole bucket.

    Sweeps guesses of the oracle optimum in descending powers of (1+eps),
    filters senders whose price or singleton utility is negligible at that
    guess, groups the rest into price buckets of ratio e, and accepts the
    largest guess whose best bucket certifies value >= guess / alpha_hat.
    The best positive singleton is kept as a fallback candidate so the
    returned value is never below (max_j Q_ij u_ij), which at this scale
    dominates 1/alpha_hat of the exact optimum.
    """
    if not (0.0 < eps < 0.5):
        raise ValueError("eps must lie in (0, 1/2)")
    if instance.sharing.kind == "proportional":
        raise ValueError("bucketing oracle needs a cross-monotone sharing rule")
    if instance.sharing.kind == "shapley_sampled":
        logger.debug("bucketing with sampled Shapley: cross-monotonicity only approximate")
    n = instance.n
    senders = instance.senders_of[i]
    q_of = {j: prices.q(i, j) for j in senders}
    u_of = {j: utility(instance, i, frozenset({j})) for j in senders}
    pos = [j for j in senders if q_of[j] > 0.0]
    best_single, single_val = _EMPTY, 0.0
    for j in pos:
        if q_of[j] * u_of[j] > single_val:
            best_single, single_val = frozenset({j}), q_of[j] * u_of[j]
    if not pos or single_val <= 0.0:
        return OracleResult(chosen=_EMPTY, value=0.0, guesses=0)

    alpha_hat = bucketing_alpha(n, eps)
    delta = math.e - 1.0
    n_buckets = 3 * math.ceil(math.log(n / eps) / math.log(1.0 + delta))
    u_floor = eps * eps / (n * n)

    best_set, best_val = _EMPTY, 0.0
    guesses = 0
    guess = n * single_val
    lo = single_val / (1.0 + eps)
    while guess >= lo:
        guesses += 1
        u0 = eps * guess / n
        buckets: dict[int, list[int]] = {}
        for j in pos:
            if q_of[j] * u_of[j] < eps * guess / n or u_of[j] < u_floor:
                continue
            if q_of[j] <= u0:
                continue
            k = int(math.floor(math.log(q_of[j] / u0) / math.log(1.0 + delta)))
            while u0 * (1.0 + delta) ** k >= q_of[j]:
                k -= 1
            while u0 * (1.0 + delta) ** (k + 1) < q_of[j]:
                k += 1
            if 0 <= k < n_buckets:
                buckets.setdefault(k, []).append(j)
        cand_set, cand_val = _EMPTY, 0.0
        for k in sorted(buckets):
            b_set = frozenset(buckets[k])
            v_k = sum(q_of[j] * h for j, h in shares(instance, i, b_set).items())
            if v_k > cand_val:
                cand_set, cand_val = b_set, v_k
        if cand_val > best_val:
            best_set, best_val = cand_set, cand_val
        if cand_val >= guess / alpha_hat:
            break  # largest valid guess; best_set already holds the top candidate
        guess /= 1.0 + eps

    if single_val > best_val:
        best_set, best_val = best_single, single_val
    return OracleResult(chosen=best_set, value=best_val, guesses=guesses)


def _knapsack_fptas(profits: list[float], weights_int: list[int], cap_int: int,
                    eps: float) -> int:
    """Profit-scaled knapsack DP; returns a bitmask of the chosen items."""
    m = len(profits)
    p_max = max(profits)
    scale = eps * p_max / m if p_max > 0 else 1.0
    rp = [int(p // scale) for p in profits]
    total = sum(rp)
    INF = float("inf")
    min_w: list[float] = [0.0] + [INF] * total
    pick: list[int] = [0] * (total + 1)
    for idx in range(m):
        w, r = weights_int[idx], rp[idx]
        for t in range(total, r - 1, -1):
            cand = min_w[t - r] + w
            if cand < min_w[t]:
                min_w[t] = cand
                pick[t] = pick[t - r] | (1 << idx)
    best_mask, best_profit = 0, -1.0
    for t in range(total + 1):
        if min_w[t] <= cap_int:
            actual = sum(profits[b] for b in range(m) if pick[t] & (1 << b))
            if actual > best_profit:
                best_mask, best_profit = pick[t], actual
    return best_mask


def oracle_knapsack(instance: Instance, i: int, prices: DualPrices, eps: float = 0.1) -> OracleResult:
    """Guess the optimal data volume and solve a knapsack per guess.

    For symmetric weighted utilities with proportional sharing (w = s) the
    objective factors as (sum_j Q_ij s_ij) * f_i(D)/D; f(x)/x non-increasing
    lets a (1+eps) grid on D plus an FPTAS knapsack give a (1+eps)^2 factor.
    """
    model = instance.utility
    if not isinstance(model, SymmetricWeighted):
        raise ValueError("knapsack oracle needs the symmetric weighted model")
    if instance.sharing.kind != "proportional" or instance.sharing.weights != "size":
        raise ValueError("knapsack oracle needs proportional sharing with w = s")
    if not (0.0 < eps < 1.0):
        raise ValueError("eps must lie in (0, 1)")
    f = model.f[i]
    items = [
        (j, prices.q(i, j), model.sizes.get((i, j), 0.0))
        for j in instance.senders_of[i]
    ]
    items = [(j, q, s) for j, q, s in items if q > 0.0 and s > 0.0]
    if not items:
        return OracleResult(chosen=_EMPTY, value=0.0, guesses=0)

    # sizes live on a 6-digit fixed-point grid so capacity comparisons are exact
    weights_int = [round(s * SIZE_FIXED_POINT) for _, _, s in items]
    total_int = sum(weights_int)
    grid_int = set(weights_int) | {total_int}
    phi = float(min(weights_int))
    while phi < total_int:
        grid_int.add(round(phi))
        phi *= 1.0 + eps

    best_set, best_score = _EMPTY, 0.0
    for cap_int in sorted(grid_int):
        phi = cap_int / SIZE_FIXED_POINT
        fit = [idx for idx in range(len(items)) if weights_int[idx] <= cap_int]
        if not fit:
            continue
        mask = _knapsack_fptas(
            [items[idx][1] * items[idx][2] for idx in fit],
            [weights_int[idx] for idx in fit],
            cap_int,
            eps,
        )
        chosen = frozenset(items[fit[b]][0] for b in range(len(fit)) if mask & (1 << b))
        if not chosen:
            continue
        v_phi = sum(items[fit[b]][1] * items[fit[b]][2] for b in range(len(fit)) if mask & (1 << b))
        score = v_phi * f(phi) / phi
        if score > best_score:
            best_set, best_score = chosen, score

    if not best_set:
        return OracleResult(chosen=_EMPTY, value=0.0, guesses=len(grid_int))
    value = oracle_value(instance, i, prices, best_set)
    return OracleResult(chosen=best_set, value=value, guesses=len(grid_int))


def oracle_continuous(instance: Instance, i: int, prices: DualPrices, eps: float = 0.1) -> OracleResult:
    """Fractional oracle for continuous concave utilities with proportional sharing.

    Guesses the per-unit value level V = f(D)/D in powers of (1+eps); each
    guess reduces to a fractional knapsack under the capacity D_max(V) found
    by bisection (f(x)/x is non-increasing).
    """
    model = instance.utility
    if not isinstance(model, ContinuousConcave):
        raise ValueError("unsupported concave family: continuous oracle needs scalar-volume utilities")
    if instance.sharing.kind != "proportional" or instance.sharing.weights != "size":
        raise ValueError("continuous oracle needs proportional sharing with w = s")
    f = model.f[i]
    items = [
        (j, prices.q(i, j), model.sizes.get((i, j), 0.0))
        for j in instance.senders_of[i]
    ]
    items = [(j, q, s) for j, q, s in items if s > 0.0]
    pos = [(j, q, s) for j, q, s in items if q > 0.0]
    if not pos:
        return OracleResult(chosen=_EMPTY, value=0.0, y={}, guesses=0)

    s_pos = [s for _, _, s in pos]
    d_hi = sum(s_pos)
    v_min = f(d_hi) / d_hi
    s_min = min(s_pos)
    v_max = f(s_min) / s_min
    pos_sorted = sorted(pos, key=lambda t: (-t[1], t[0]))

    def fill(cap: float) -> tuple[dict[int, float], float, float]:
        y: dict[int, float] = {}
        w = used = 0.0
        for j, q, s in pos_sorted:
            if cap - used <= 0.0:
                break
            frac = min(1.0, (cap - used) / s)
            if frac <= 0.0:
                break
            y[j] = frac
            used += s * frac
            w += q * s * frac
        return y, w, used

    best_y: dict[int, float] = {}
    best_score = 0.0
    guesses = 0
    level = v_max
    while True:
        guesses += 1
        # D_max(level): largest D with f(D) >= level * D
        if f(d_hi) >= level * d_hi:
            cap = d_hi
        else:
            lo_d, hi_d = 0.0, d_hi
            while hi_d - lo_d > 1e-10 * d_hi:
                mid = 0.5 * (lo_d + hi_d)
                if f(mid) >= level * mid:
                    lo_d = mid
                else:
                    hi_d = mid
            cap = lo_d
        y, w, _ = fill(cap)
        if w * level > best_score:
            best_y, best_score = y, w * level
        if level <= v_min:
            break
        level = max(level / (1.0 + eps), v_min)

    if not best_y:
        return OracleResult(chosen=_EMPTY, value=0.0, y={}, guesses=guesses)
    d = sum(model.sizes[(i, j)] * yj for j, yj in best_y.items())
    w = sum(prices.q(i, j) * model.sizes[(i, j)] * yj for j, yj in best_y.items())
    value = w * f(d) / d if d > 0 else 0.0
    return OracleResult(chosen=frozenset(best_y), value=value, y=best_y, guesses=guesses)


# ---------------------------------------------------------------------------
# Imbalance sub-oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvexCost:
    """Non-decreasing convex cost x -> x^a (a >= 1); a = 2 is the default quadratic."""

    a: float = 2.0

    def __post_init__(self) -> None:
        if self.a < 1.0:
            raise ValueError("cost exponent < 1 is not convex")

    def __call__(self, x: float) -> float:
        return x**self.a

    def derivative(self, x: float) -> float:
        return self.a * x ** (self.a - 1.0)


def _water_fill(p: np.ndarray, budget: float, cost: ConvexCost) -> np.ndarray:
    out = np.zeros_like(p)
    if budget <= 0.0 or not np.any(p > 0):
        return out
    active = p > 0
    if cost.a == 1.0:
        # linear cost: spend the whole budget on the single best price
        k = int(np.argmax(p))
        out[k] = budget
        return out
    expo = 1.0 / (cost.a - 1.0)
    base = np.where(active, p, 0.0) ** expo
    t = (budget / np.sum(base**cost.a)) ** (1.0 / cost.a)
    out[active] = base[active] * t
    return out


def oracle_imbalance(p: np.ndarray, r: np.ndarray, C: float, C_prime: float,
                     g: ConvexCost | None = None, h: ConvexCost | None = None,
                     ) -> tuple[np.ndarray, np.ndarray, float]:
    """Maximize sum p_i delta_i + sum r_i gamma_i over the convex cost budgets.

    The two halves separate; each is solved in closed form by KKT
    water-filling (quadratic: delta_i = p_i * sqrt(C / sum p_j^2)).
    """
    g = g or ConvexCost()
    h = h or ConvexCost()
    p = np.asarray(p, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(p < 0) or np.any(r < 0) or C < 0 or C_prime < 0:
        raise ValueError("prices and budgets must be non-negative")
    delta = _water_fill(p, C, g)
    gamma = _water_fill(r, C_prime, h)
    value = float(p @ delta + r @ gamma)
    return delta, gamma, value


# ---------------------------------------------------------------------------
# Oracle registry used by the solver and CLI
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleSpec:
    name: str
    fn: object = field(repr=False)
    eps: float = 0.1

    def alpha(self, instance: Instance) -> float:
        if self.name == "bruteforce":
            return 1.0
        if self.name == "bucketing":
            return bucketing_alpha(instance.n, self.eps)
        if self.name == "knapsack":
            return (1.0 + self.eps) ** 2
        if self.name == "continuous":
            return 1.0 + self.eps
        raise ValueError(f"unknown oracle {self.name!r}")

    def __call__(self, instance: Instance, i: int, prices: DualPrices) -> OracleResult:
        if self.name == "bruteforce":
            return oracle_bruteforce(instance, i, prices)
        return self.fn(instance, i, prices, self.eps)  # type: ignore[operator]


def get_oracle(name: str, eps: float = 0.1) -> OracleSpec:
    table = {
        "bruteforce": oracle_bruteforce,
        "bucketing": oracle_bucketing,
        "knapsack": oracle_knapsack,
        "continuous": oracle_continuous,
    }
    if name not in table:
        raise ValueError(f"unknown oracle {name!r}")
    return OracleSpec(name=name, fn=table[name], eps=eps)

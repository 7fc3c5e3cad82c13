"""Problem model for balanced data exchange: utility models, instances, solutions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Mapping, Sequence

import numpy as np

# Equality tolerance used across the toolkit for exact identities.
EQ_TOL = 1e-9

# Table models and the brute-force oracle enumerate subsets; cap keeps 2^k feasible.
MAX_ENUMERABLE_SENDERS = 20


class DegenerateInstanceError(ValueError):
    """Raised when an instance has no utility anywhere (cannot be normalized)."""


# ---------------------------------------------------------------------------
# Concave value functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConcaveSpec:
    """A non-decreasing concave function f with f(0) = 0.

    Kinds: sqrt, power (x^c, c in (0,1]), capped_linear (min(x, cap)),
    variance_reduction (sigma2 * (1 - 1/(1+x))), piecewise_linear (breakpoints).
    `scale` is an output multiplier used by instance normalization.
    """

    kind: str
    c: float = 1.0
    cap: float = 1.0
    sigma2: float = 1.0
    points: tuple[tuple[float, float], ...] = ()
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("sqrt", "power", "capped_linear", "variance_reduction", "piecewise_linear"):
            raise ValueError(f"unknown concave kind {self.kind!r}")
        if self.kind == "power" and not (0.0 < self.c <= 1.0):
            raise ValueError("power exponent must lie in (0, 1]")
        if self.kind == "capped_linear" and self.cap < 0:
            raise ValueError("cap must be non-negative")
        if self.kind == "piecewise_linear":
            pts = self.points
            if not pts or pts[0] != (0.0, 0.0):
                raise ValueError("piecewise_linear must start at (0, 0)")
            slopes = []
            for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
                if x1 <= x0 or y1 < y0:
                    raise ValueError("piecewise_linear breakpoints must increase")
                slopes.append((y1 - y0) / (x1 - x0))
            if any(s1 > s0 + EQ_TOL for s0, s1 in zip(slopes, slopes[1:])):
                raise ValueError("piecewise_linear slopes must be non-increasing (concavity)")
        if self.scale < 0:
            raise ValueError("scale must be non-negative")

    def __call__(self, x: float) -> float:
        if x < 0:
            raise ValueError("concave functions are defined for x >= 0")
        if self.kind == "sqrt":
            v = math.sqrt(x)
        elif self.kind == "power":
            v = x**self.c
        elif self.kind == "capped_linear":
            v = min(x, self.cap)
        elif self.kind == "variance_reduction":
            v = self.sigma2 * (1.0 - 1.0 / (1.0 + x))
        else:  # piecewise_linear
            v = self._piecewise(x)
        return self.scale * v

    def _piecewise(self, x: float) -> float:
        pts = self.points
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            if x <= x1:
                return y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        # extend final segment's slope beyond the last breakpoint
        (x0, y0), (x1, y1) = pts[-2], pts[-1]
        return y1 + (y1 - y0) / (x1 - x0) * (x - x1)

    def rescaled(self, divisor: float) -> ConcaveSpec:
        return ConcaveSpec(self.kind, self.c, self.cap, self.sigma2, self.points, self.scale / divisor)


# ---------------------------------------------------------------------------
# Utility models
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ExplicitTable:
    """Per-agent utility tables over all subsets of the permitted senders.

    Each agent's table is an array indexed by bitmask over its sorted sender
    tuple.  Entries must be in [0, 1], monotone, with u(empty) = 0.
    """

    senders: tuple[tuple[int, ...], ...]  # sorted sender tuple per agent
    values: tuple[np.ndarray, ...]  # values[i][mask]

    kind = "explicit_table"

    def __post_init__(self) -> None:
        for i, (send, vals) in enumerate(zip(self.senders, self.values)):
            k = len(send)
            if k > MAX_ENUMERABLE_SENDERS:
                raise ValueError(f"agent {i}: {k} senders exceeds enumeration cap")
            if tuple(sorted(send)) != send:
                raise ValueError(f"agent {i}: senders must be sorted")
            if len(vals) != 1 << k:
                raise ValueError(f"agent {i}: table must cover all {1 << k} subsets")
            if abs(vals[0]) > EQ_TOL:
                raise ValueError(f"agent {i}: u(empty set) must be 0")
            if np.any(vals < -EQ_TOL) or np.any(vals > 1.0 + EQ_TOL):
                raise ValueError(f"agent {i}: utilities must lie in [0, 1]")
            if k <= 12:
                for mask in range(1 << k):
                    for b in range(k):
                        if mask & (1 << b) and vals[mask] < vals[mask ^ (1 << b)] - EQ_TOL:
                            raise ValueError(f"agent {i}: table is not monotone")

    def mask_of(self, i: int, subset: frozenset[int]) -> int:
        send = self.senders[i]
        mask = 0
        for j in subset:
            try:
                mask |= 1 << send.index(j)
            except ValueError:
                raise ValueError(f"sender {j} not permitted for agent {i}") from None
        return mask

    def value(self, i: int, subset: frozenset[int]) -> float:
        return float(self.values[i][self.mask_of(i, subset)])

    def rescaled(self, divisor: float) -> ExplicitTable:
        return ExplicitTable(self.senders, tuple(v / divisor for v in self.values))


@dataclass(eq=False)
class SymmetricWeighted:
    """u_i(S) = f_i(sum of data sizes s_ij over j in S) with f_i concave."""

    sizes: dict[tuple[int, int], float]  # (receiver, sender) -> size >= 0
    f: tuple[ConcaveSpec, ...]  # one spec per agent

    kind = "symmetric_weighted"

    def __post_init__(self) -> None:
        for (i, j), s in self.sizes.items():
            if s < 0:
                raise ValueError(f"size s[{i},{j}] must be non-negative")

    def total_size(self, i: int, subset: frozenset[int]) -> float:
        return sum(self.sizes.get((i, j), 0.0) for j in subset)

    def value(self, i: int, subset: frozenset[int]) -> float:
        return self.f[i](self.total_size(i, subset))

    def rescaled(self, divisor: float) -> SymmetricWeighted:
        return SymmetricWeighted(dict(self.sizes), tuple(fi.rescaled(divisor) for fi in self.f))


@dataclass(eq=False)
class PathVariance:
    """Variance-reduction utilities for agents estimating path delays.

    Agent i holds z[i] samples for every edge of its path.  Receiving sets S
    adds donated samples per edge; utility is the drop in total sample
    variance.  Edges in one correlation class share a delay distribution, so a
    donor's samples on any class member count toward every class member.
    """

    n_nodes: int
    edges: tuple[tuple[int, int], ...]
    paths: tuple[tuple[int, ...], ...]  # edge indices per agent
    sigma2: np.ndarray  # variance per edge
    z: np.ndarray  # initial sample count per agent
    classes: np.ndarray  # correlation class id per edge
    scale: float = 1.0  # output divisor set by normalization

    kind = "path_variance"

    def __post_init__(self) -> None:
        if np.any(self.sigma2 < 0) or np.any(self.sigma2 > 1 + EQ_TOL):
            raise ValueError("edge variances must lie in [0, 1]")
        if np.any(self.z < 1):
            raise ValueError("sample counts must be >= 1")
        for p in self.paths:
            for e in p:
                if not (0 <= e < len(self.edges)):
                    raise ValueError("path references unknown edge")

    @cached_property
    def _class_counts(self) -> np.ndarray:
        # counts[j, c] = samples agent j holds on edges of class c
        n_agents = len(self.paths)
        n_classes = int(self.classes.max()) + 1 if len(self.classes) else 0
        counts = np.zeros((n_agents, n_classes))
        for j, path in enumerate(self.paths):
            for e in path:
                counts[j, int(self.classes[e])] += float(self.z[j])
        return counts

    def _receiver_arrays(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        # (sigma2 along path, donor matrix [agent, path-edge])
        path = np.asarray(self.paths[i], dtype=int)
        sig = self.sigma2[path]
        donors = self._class_counts[:, self.classes[path]]
        return sig, donors

    def baseline_variance(self, i: int) -> float:
        sig, _ = self._receiver_arrays(i)
        return float(np.sum(sig / float(self.z[i])))

    def value(self, i: int, subset: frozenset[int]) -> float:
        sig, donors = self._receiver_arrays(i)
        added = donors[sorted(subset)].sum(axis=0) if subset else 0.0
        u = np.sum(sig / float(self.z[i])) - np.sum(sig / (float(self.z[i]) + added))
        return float(u) / self.scale

    def prefix_values(self, i: int, order: Sequence[int]) -> np.ndarray:
        """Utilities of the prefixes of `order` (one permutation pass)."""
        sig, donors = self._receiver_arrays(i)
        cum = np.cumsum(donors[list(order)], axis=0)
        v0 = np.sum(sig / float(self.z[i]))
        vals = v0 - np.sum(sig / (float(self.z[i]) + cum), axis=1)
        return np.asarray(vals) / self.scale

    def rescaled(self, divisor: float) -> PathVariance:
        return PathVariance(
            self.n_nodes, self.edges, self.paths, self.sigma2, self.z, self.classes,
            scale=self.scale * divisor,
        )


@dataclass(eq=False)
class X3CCoverage:
    """Coverage utilities of the exact-3-cover hardness construction.

    Agents 0..m-1 are set agents p_i, m..2m-1 are dummy agents q_i, then w,
    z1, z2.  Universe elements 0..3k-1 are real, 3k..3k+m-1 are dummies; P_i
    additionally covers dummy i and Q_i = {dummy i}.  Utilities are stored raw
    (they exceed 1); `scale` records the normalization divisor.
    """

    m: int
    k: int
    sets: tuple[frozenset[int], ...]
    scale: float = 1.0

    kind = "x3c_coverage"

    def __post_init__(self) -> None:
        if len(self.sets) != self.m:
            raise ValueError("need exactly m sets")
        for s in self.sets:
            if len(s) != 3 or not all(0 <= e < 3 * self.k for e in s):
                raise ValueError("each set must contain exactly 3 universe elements")

    @property
    def w(self) -> int:
        return 2 * self.m

    @property
    def z1(self) -> int:
        return 2 * self.m + 1

    @property
    def z2(self) -> int:
        return 2 * self.m + 2

    def elements_of(self, agent: int) -> frozenset[int]:
        if agent < self.m:  # p_i covers its triple plus dummy i
            return self.sets[agent] | {3 * self.k + agent}
        if agent < 2 * self.m:  # q_i covers dummy i only
            return frozenset({3 * self.k + (agent - self.m)})
        raise ValueError(f"agent {agent} is not a set agent")

    def value(self, i: int, subset: frozenset[int]) -> float:
        if not subset:
            return 0.0
        if i == self.w:
            covered: set[int] = set()
            for a in subset:
                covered |= self.elements_of(a)
            return len(covered) / self.scale
        if i < self.m:  # p_i receives only from z1
            return (4.0 if self.z1 in subset else 0.0) / self.scale
        if i < 2 * self.m:  # q_i receives only from z2
            return (1.0 if self.z2 in subset else 0.0) / self.scale
        if i == self.z1:
            return (3.5 * self.k if self.w in subset else 0.0) / self.scale
        if i == self.z2:
            return (self.m - self.k / 2.0 if self.w in subset else 0.0) / self.scale
        raise ValueError(f"unknown agent {i}")

    def coverage_shares(self, subset: frozenset[int]) -> dict[int, float]:
        """Shapley shares of u_w(subset): 1/c_e per covering set, per element."""
        cover_count: dict[int, int] = {}
        for a in subset:
            for e in self.elements_of(a):
                cover_count[e] = cover_count.get(e, 0) + 1
        shares = {}
        for a in subset:
            shares[a] = sum(1.0 / cover_count[e] for e in self.elements_of(a)) / self.scale
        return shares

    def rescaled(self, divisor: float) -> X3CCoverage:
        return X3CCoverage(self.m, self.k, self.sets, scale=self.scale * divisor)


@dataclass(eq=False)
class ContinuousConcave:
    """Fractional-transfer utilities u_i(y) = f_i(sum s_ij * y_ij), y in [0,1]^m."""

    sizes: dict[tuple[int, int], float]
    f: tuple[ConcaveSpec, ...]
    floor: float = 1e-6  # positivity floor: u from any single full transfer

    kind = "continuous_concave"

    def __post_init__(self) -> None:
        if self.floor <= 0:
            raise ValueError("positivity floor must be > 0")
        for (i, j), s in self.sizes.items():
            if s < 0:
                raise ValueError(f"size s[{i},{j}] must be non-negative")

    def value(self, i: int, subset: frozenset[int]) -> float:
        return self.f[i](sum(self.sizes.get((i, j), 0.0) for j in subset))

    def value_fractional(self, i: int, y: Mapping[int, float]) -> float:
        return self.f[i](sum(self.sizes.get((i, j), 0.0) * yj for j, yj in y.items()))

    def rescaled(self, divisor: float) -> ContinuousConcave:
        return ContinuousConcave(
            dict(self.sizes), tuple(fi.rescaled(divisor) for fi in self.f), self.floor
        )


UtilityModel = ExplicitTable | SymmetricWeighted | PathVariance | X3CCoverage | ContinuousConcave


# ---------------------------------------------------------------------------
# Sharing rule specification (implementations live in datex.sharing)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SharingRuleSpec:
    """How utility u_i(S) is split among the senders in S."""

    kind: str  # shapley_exact | shapley_sampled | proportional
    m: int = 10  # permutations for the sampled variant
    seed: int = 0
    weights: str | tuple[tuple[int, int, float], ...] | None = None  # proportional only

    def __post_init__(self) -> None:
        if self.kind not in ("shapley_exact", "shapley_sampled", "proportional"):
            raise ValueError(f"unknown sharing rule {self.kind!r}")
        if self.kind == "shapley_sampled" and self.m < 1:
            raise ValueError("permutation count m must be >= 1")
        if self.kind == "proportional":
            if isinstance(self.weights, str):
                if self.weights not in ("singleton", "size"):
                    raise ValueError("weights rule must be 'singleton' or 'size'")
            elif self.weights is not None:
                for _, _, wv in self.weights:
                    if wv < 0:
                        raise ValueError("proportional weights must be non-negative")


# ---------------------------------------------------------------------------
# Instance
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Instance:
    """An exchange market: agents, permitted transfers, utilities, sharing rule.

    Instances are immutable after construction; all evaluation is pure.
    """

    n: int
    allowed: frozenset[tuple[int, int]]  # (receiver, sender) pairs
    utility: UtilityModel
    sharing: SharingRuleSpec
    epsilon: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("need at least one agent")
        if not (0 < self.epsilon < 1):
            raise ValueError("epsilon must lie in (0, 1)")
        for i, j in self.allowed:
            if i == j:
                raise ValueError(f"self-pair ({i},{i}) is not permitted")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"pair ({i},{j}) references unknown agent")
        self._check_model_references()

    def _check_model_references(self) -> None:
        u = self.utility
        if isinstance(u, (SymmetricWeighted, ContinuousConcave)):
            for (i, j), s in u.sizes.items():
                if s > 0 and (i, j) not in self.allowed:
                    raise ValueError(f"utility references non-permitted pair ({i},{j})")
        elif isinstance(u, ExplicitTable):
            if len(u.senders) != self.n:
                raise ValueError("table must cover every agent")
            for i, senders in enumerate(u.senders):
                for j in senders:
                    if (i, j) not in self.allowed:
                        raise ValueError(f"utility references non-permitted pair ({i},{j})")

    @cached_property
    def senders_of(self) -> tuple[tuple[int, ...], ...]:
        by_receiver: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.allowed:
            by_receiver[i].append(j)
        return tuple(tuple(sorted(js)) for js in by_receiver)

    @cached_property
    def receivers_of(self) -> tuple[tuple[int, ...], ...]:
        by_sender: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.allowed:
            by_sender[j].append(i)
        return tuple(tuple(sorted(it)) for it in by_sender)

    def full_set(self, i: int) -> frozenset[int]:
        return frozenset(self.senders_of[i])


def utility(instance: Instance, i: int, subset: frozenset[int]) -> float:
    """u_i(S) for a permitted subset S of senders."""
    if not subset:
        return 0.0
    extra = subset - set(instance.senders_of[i])
    if extra:
        raise ValueError(f"senders {sorted(extra)} are not permitted for agent {i}")
    return instance.utility.value(i, subset)


def normalize_instance(instance: Instance) -> tuple[Instance, float]:
    """Scale utilities so max_i u_i(full sender set) = 1; returns (instance, scale)."""
    peak = max(utility(instance, i, instance.full_set(i)) for i in range(instance.n))
    if peak <= 0.0:
        raise DegenerateInstanceError("degenerate instance: all utilities are zero")
    if abs(peak - 1.0) <= EQ_TOL:
        return instance, 1.0
    return (
        Instance(
            n=instance.n,
            allowed=instance.allowed,
            utility=instance.utility.rescaled(peak),
            sharing=instance.sharing,
            epsilon=instance.epsilon,
            seed=instance.seed,
        ),
        peak,
    )


# ---------------------------------------------------------------------------
# Solutions and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FracColumn:
    """A fractional transfer vector y (continuous model columns)."""

    y: tuple[tuple[int, float], ...]  # (sender, fraction in (0, 1]), sorted by sender

    def __post_init__(self) -> None:
        senders = [j for j, _ in self.y]
        if senders != sorted(senders):
            raise ValueError("fractional column must be sorted by sender")
        for _, frac in self.y:
            if not (0.0 < frac <= 1.0 + EQ_TOL):
                raise ValueError("fractions must lie in (0, 1]")

    def senders(self) -> frozenset[int]:
        return frozenset(j for j, _ in self.y)


Column = frozenset  # set column; FracColumn is the fractional alternative


def column_senders(col: frozenset[int] | FracColumn) -> frozenset[int]:
    return col.senders() if isinstance(col, FracColumn) else col


def _column_sort_key(col: frozenset[int] | FracColumn):
    if isinstance(col, FracColumn):
        return (1, col.y)
    return (0, tuple(sorted(col)))


@dataclass(eq=False)
class ExchangeSolution:
    """Per-agent finite distributions over sender subsets (missing mass = empty set).

    Columns are sender subsets; instances with the continuous model may carry
    fractional-transfer columns instead.
    """

    n: int
    columns: dict[int, dict[frozenset[int] | FracColumn, float]]
    deltas: np.ndarray | None = None  # allowed excess of sent over received
    gammas: np.ndarray | None = None  # allowed excess of received over sent

    def __post_init__(self) -> None:
        for i, dist in self.columns.items():
            if not (0 <= i < self.n):
                raise ValueError(f"column for unknown agent {i}")
            mass = 0.0
            for col, x in dist.items():
                if x < -EQ_TOL or x > 1.0 + EQ_TOL:
                    raise ValueError(f"weight x[{i}] outside [0, 1]")
                if i in column_senders(col):
                    raise ValueError(f"agent {i} cannot receive from itself")
                mass += x
            if mass > 1.0 + 1e-9:
                raise ValueError(f"agent {i} subset weights sum to {mass} > 1")
        for vec in (self.deltas, self.gammas):
            if vec is not None and (len(vec) != self.n or np.any(np.asarray(vec) < -EQ_TOL)):
                raise ValueError("imbalance slacks must be non-negative, one per agent")

    @staticmethod
    def empty(n: int) -> ExchangeSolution:
        return ExchangeSolution(n=n, columns={})

    def iter_columns(self) -> Iterator[tuple[int, frozenset[int] | FracColumn, float]]:
        for i in sorted(self.columns):
            for col in sorted(self.columns[i], key=_column_sort_key):
                yield i, col, self.columns[i][col]

    def column_count(self) -> int:
        return sum(len(d) for d in self.columns.values())


def scale_solution(solution: ExchangeSolution, factor: float) -> ExchangeSolution:
    """Multiply every subset weight by factor in [0, 1]."""
    if not (0.0 <= factor <= 1.0):
        raise ValueError("factor must lie in [0, 1]")
    cols = {
        i: {s: x * factor for s, x in dist.items() if x * factor > 0.0}
        for i, dist in solution.columns.items()
    }
    cols = {i: d for i, d in cols.items() if d}
    deltas = None if solution.deltas is None else solution.deltas * factor
    gammas = None if solution.gammas is None else solution.gammas * factor
    return ExchangeSolution(n=solution.n, columns=cols, deltas=deltas, gammas=gammas)


def column_utility(instance: Instance, i: int, col: frozenset[int] | FracColumn) -> float:
    """Utility of a solution column (set or fractional)."""
    if isinstance(col, FracColumn):
        model = instance.utility
        if not isinstance(model, ContinuousConcave):
            raise ValueError("fractional columns need the continuous model")
        return model.value_fractional(i, dict(col.y))
    return utility(instance, i, col)


@dataclass
class SolveReport:
    """Welfare, per-agent utilities and balance residuals for a solution."""

    welfare: float
    per_agent_utility: np.ndarray
    balance_residual: np.ndarray  # received minus sent, per agent
    iterations: int
    feasible: bool
    best_B: float
    guarantee: float = 0.0  # certified welfare lower bound, when a solver ran
    caveats: list[str] = field(default_factory=list)


def evaluate(instance: Instance, solution: ExchangeSolution,
             iterations: int = 0, best_B: float = 0.0) -> SolveReport:
    """Evaluate welfare and the per-agent balance residuals of a solution.

    residual_i = (expected utility received by i) - (expected utility i sends).
    Feasible means |residual_i| <= epsilon, widened by the delta/gamma slacks
    when the solution carries them.
    """
    from .sharing import column_shares  # deferred: sharing depends on the model types

    n = instance.n
    received = np.zeros(n)
    sent = np.zeros(n)
    for i, col, x in solution.iter_columns():
        if x == 0.0:
            continue
        received[i] += x * column_utility(instance, i, col)
        for j, h in column_shares(instance, i, col).items():
            sent[j] += x * h
    residual = received - sent
    lo = np.full(n, -instance.epsilon)
    hi = np.full(n, instance.epsilon)
    if solution.deltas is not None:
        lo -= np.asarray(solution.deltas)  # sent may exceed received by delta_i
    if solution.gammas is not None:
        hi += np.asarray(solution.gammas)  # received may exceed sent by gamma_i
    feasible = bool(np.all(residual >= lo - EQ_TOL) and np.all(residual <= hi + EQ_TOL))
    return SolveReport(
        welfare=float(received.sum()),
        per_agent_utility=received,
        balance_residual=residual,
        iterations=iterations,
        feasible=feasible,
        best_B=best_B,
    )

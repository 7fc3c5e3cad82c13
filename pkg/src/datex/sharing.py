"""Utility sharing rules: exact Shapley, permutation-sampled Shapley, proportional."""

from __future__ import annotations

import math
import weakref
from typing import Iterable

import numpy as np

from .model import (
    EQ_TOL,
    ContinuousConcave,
    FracColumn,
    Instance,
    PathVariance,
    SymmetricWeighted,
    X3CCoverage,
    utility,
)

MAX_EXACT_SHAPLEY = 12

# shares are pure per (instance, agent, subset); memoized for the solver loops
_share_cache: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()


def shares(instance: Instance, i: int, subset: frozenset[int]) -> dict[int, float]:
    """h_ij(subset) for every j in subset, per the instance's sharing rule."""
    if not subset:
        return {}
    cache = _share_cache.setdefault(instance, {})
    key = (i, subset)
    hit = cache.get(key)
    if hit is not None:
        return hit
    rule = instance.sharing
    if isinstance(instance.utility, X3CCoverage) and rule.kind in ("shapley_exact", "shapley_sampled"):
        out = _x3c_shapley(instance, i, subset)
    elif rule.kind == "shapley_exact":
        out = shapley_exact(instance, i, subset)
    elif rule.kind == "shapley_sampled":
        out = shapley_sampled(instance, i, subset, rule.m, rule.seed)
    else:
        out = proportional(instance, i, subset)
    cache[key] = out
    return out


def column_shares(instance: Instance, i: int, col: frozenset[int] | FracColumn) -> dict[int, float]:
    """Shares of a solution column; fractional columns use proportional-on-volume."""
    if not isinstance(col, FracColumn):
        return shares(instance, i, col)
    model = instance.utility
    if not isinstance(model, ContinuousConcave):
        raise ValueError("fractional columns need the continuous model")
    if instance.sharing.kind != "proportional":
        raise ValueError("fractional columns need proportional sharing")
    y = dict(col.y)
    volume = {j: model.sizes.get((i, j), 0.0) * frac for j, frac in y.items()}
    total = sum(volume.values())
    if total <= 0.0:
        return {j: 0.0 for j in y}
    u = model.value_fractional(i, y)
    return {j: v / total * u for j, v in volume.items()}


def _x3c_shapley(instance: Instance, i: int, subset: frozenset[int]) -> dict[int, float]:
    # Coverage utilities have a closed-form Shapley value: each covered element
    # hands 1/c_e(S) to every covering set.  Non-coverage agents have a single
    # permitted sender, so the share is the full utility.
    model = instance.utility
    assert isinstance(model, X3CCoverage)
    if i == model.w:
        return model.coverage_shares(subset)
    (j,) = subset
    return {j: utility(instance, i, subset)}


def shapley_exact(instance: Instance, i: int, subset: frozenset[int]) -> dict[int, float]:
    """Exact Shapley shares via the subset-weighted sum (2^|S| evaluations)."""
    if not subset:
        return {}
    members = sorted(subset)
    s = len(members)
    if s > MAX_EXACT_SHAPLEY:
        raise ValueError(
            f"|S| = {s} exceeds the exact-Shapley bound {MAX_EXACT_SHAPLEY}; use shapley_sampled"
        )
    # weight of a coalition W preceding j: |W|! (s - |W| - 1)! / s!
    fact = [math.factorial(t) for t in range(s + 1)]
    coeff = [fact[c] * fact[s - c - 1] / fact[s] for c in range(s)]
    u_of: dict[int, float] = {}

    def u_mask(mask: int) -> float:
        val = u_of.get(mask)
        if val is None:
            val = utility(instance, i, frozenset(members[b] for b in range(s) if mask & (1 << b)))
            u_of[mask] = val
        return val

    out = {j: 0.0 for j in members}
    for mask in range(1 << s):
        c = mask.bit_count()
        if c == s:
            continue
        base = u_mask(mask)
        w = coeff[c]
        for b in range(s):
            if not mask & (1 << b):
                out[members[b]] += w * (u_mask(mask | (1 << b)) - base)
    return out


def _permutation_rng(seed: int, i: int, subset: Iterable[int]) -> np.random.Generator:
    # keyed by (seed, agent, canonical subset) so draws are call-order independent
    members = sorted(subset)
    return np.random.default_rng(np.random.SeedSequence([seed, i, len(members), *members]))


def shapley_sampled(instance: Instance, i: int, subset: frozenset[int],
                    m: int = 10, seed: int = 0) -> dict[int, float]:
    """Average marginal over m seeded uniform permutations of the subset."""
    if not subset:
        return {}
    if m < 1:
        raise ValueError("permutation count m must be >= 1")
    members = sorted(subset)
    rng = _permutation_rng(seed, i, members)
    out = {j: 0.0 for j in members}
    model = instance.utility
    for _ in range(m):
        order = [members[t] for t in rng.permutation(len(members))]
        if isinstance(model, PathVariance):
            prefix = model.prefix_values(i, order)
            prev = 0.0
            for j, val in zip(order, prefix):
                out[j] += float(val) - prev
                prev = float(val)
        else:
            prev = 0.0
            chosen: set[int] = set()
            for j in order:
                chosen.add(j)
                val = utility(instance, i, frozenset(chosen))
                out[j] += val - prev
                prev = val
    return {j: v / m for j, v in out.items()}


def _proportional_weight(instance: Instance, i: int, j: int,
                         weights: str | tuple[tuple[int, int, float], ...] | None) -> float:
    w = instance.sharing.weights if weights is None else weights
    if w is None or w == "singleton":
        return utility(instance, i, frozenset({j}))
    if w == "size":
        model = instance.utility
        if not isinstance(model, (SymmetricWeighted, ContinuousConcave)):
            raise ValueError("weights rule 'size' needs a size-based utility model")
        return model.sizes.get((i, j), 0.0)
    for (wi, wj, wv) in w:
        if wi == i and wj == j:
            return wv
    return 0.0


def proportional(instance: Instance, i: int, subset: frozenset[int],
                 weights: str | tuple[tuple[int, int, float], ...] | None = None) -> dict[int, float]:
    """h_ij(S) = w_ij / sum_k w_ik * u_i(S)."""
    if not subset:
        return {}
    u = utility(instance, i, subset)
    w_of = {j: _proportional_weight(instance, i, j, weights) for j in subset}
    total = sum(w_of.values())
    if total <= 0.0:
        if u > EQ_TOL:
            raise ValueError(f"undefined proportional share: zero weight-sum for agent {i}")
        return {j: 0.0 for j in subset}
    return {j: wv / total * u for j, wv in w_of.items()}


def cross_monotonicity_audit(instance: Instance, i: int, budget: int = 200,
                             seed: int | None = None) -> list[tuple[int, frozenset[int], frozenset[int]]]:
    """Sample (j, T subset-of S) pairs; report every h_ij(T) < h_ij(S) - tol."""
    senders = instance.senders_of[i]
    if not senders:
        return []
    rng = np.random.default_rng(instance.seed if seed is None else seed)
    violations = []
    checked = 0
    while checked < budget:
        size_s = int(rng.integers(1, len(senders) + 1))
        S = frozenset(int(x) for x in rng.choice(senders, size=size_s, replace=False))
        if len(S) < 2:
            checked += 1
            continue
        size_t = int(rng.integers(1, len(S)))
        T = frozenset(int(x) for x in rng.choice(sorted(S), size=size_t, replace=False))
        h_S = shares(instance, i, S)
        h_T = shares(instance, i, T)
        for j in sorted(T):
            if h_T[j] < h_S[j] - EQ_TOL:
                violations.append((j, T, S))
            checked += 1
            if checked >= budget:
                break
    return violations

from __future__ import annotations

import math

import numpy as np
import pytest

from datex import (
    ConcaveSpec,
    ContinuousConcave,
    ConvexCost,
    DualPrices,
    Instance,
    SharingRuleSpec,
    SymmetricWeighted,
    oracle_bruteforce,
    oracle_bucketing,
    oracle_continuous,
    oracle_imbalance,
    oracle_knapsack,
)
from datex.oracles import bucketing_alpha, oracle_value
from datex.instances import gen_random

from conftest import table_instance


def prices_for(instance, i, values):
    return DualPrices(Q={(i, j): values.get(j, 0.0) for j in instance.senders_of[i]})


def sqrt_instance(sizes_by_sender, n=None, floor=None):
    n = n or (max(sizes_by_sender) + 1)
    sizes = {(0, j): s for j, s in sizes_by_sender.items()}
    f = tuple(ConcaveSpec(kind="sqrt") for _ in range(n))
    model = (
        ContinuousConcave(sizes=sizes, f=f, floor=floor)
        if floor is not None
        else SymmetricWeighted(sizes=sizes, f=f)
    )
    return Instance(
        n=n, allowed=frozenset(sizes),
        utility=model,
        sharing=SharingRuleSpec(kind="proportional", weights="size"),
    )


# ---------------------------------------------------------------------------
# Brute force
# ---------------------------------------------------------------------------


def test_bruteforce_all_nonpositive(two_agent_unit):
    res = oracle_bruteforce(two_agent_unit, 0, prices_for(two_agent_unit, 0, {1: -0.5}))
    assert res.chosen == frozenset() and res.value == 0.0


def test_bruteforce_single_sender():
    inst = table_instance(2, {(0, 1): 0.5, (1, 0): 0.5})
    res = oracle_bruteforce(inst, 0, prices_for(inst, 0, {1: 1.0}))
    assert res.chosen == frozenset({1}) and res.value == pytest.approx(0.5)


def test_bruteforce_value_recomputable():
    inst = gen_random(6, 4, "table", seed=4)
    prices = prices_for(inst, 0, {j: 0.5 - 0.2 * j for j in inst.senders_of[0]})
    res = oracle_bruteforce(inst, 0, prices)
    assert res.value == pytest.approx(oracle_value(inst, 0, prices, res.chosen), abs=1e-9)


# ---------------------------------------------------------------------------
# Bucketing oracle
# ---------------------------------------------------------------------------


def test_bucketing_all_negative(two_agent_unit):
    res = oracle_bucketing(two_agent_unit, 0, prices_for(two_agent_unit, 0, {1: -2.0}))
    assert res.chosen == frozenset() and res.value == 0.0


def test_bucketing_single_positive_sender():
    inst = table_instance(2, {(0, 1): 0.5, (1, 0): 0.5})
    res = oracle_bucketing(inst, 0, prices_for(inst, 0, {1: 1.0}), eps=0.1)
    brute = oracle_bruteforce(inst, 0, prices_for(inst, 0, {1: 1.0}))
    assert res.chosen == frozenset({1})
    assert res.value == pytest.approx(brute.value, abs=1e-12)


def test_bucketing_requires_cross_monotone_rule(two_agent_symmetric):
    with pytest.raises(ValueError, match="cross-monotone"):
        oracle_bucketing(two_agent_symmetric, 0, prices_for(two_agent_symmetric, 0, {1: 1.0}))


def test_bucketing_ratio_and_sign_invariants():
    rng = np.random.default_rng(21)
    checked = 0
    for trial in range(60):
        n = int(rng.integers(2, 11))
        inst = gen_random(n, min(n - 1, 7), "table", seed=500 + trial)
        i = int(rng.integers(0, n))
        senders = inst.senders_of[i]
        if not senders:
            continue
        q = {j: float(rng.normal()) for j in senders}
        prices = prices_for(inst, i, q)
        res = oracle_bucketing(inst, i, prices, eps=0.1)
        brute = oracle_bruteforce(inst, i, prices)
        assert all(q[j] > 0 for j in res.chosen)  # never keeps Q <= 0
        assert res.value == pytest.approx(oracle_value(inst, i, prices, res.chosen), abs=1e-9)
        assert res.value >= brute.value / bucketing_alpha(n, 0.1) - 1e-9
        checked += 1
    assert checked >= 40


# ---------------------------------------------------------------------------
# Knapsack oracle
# ---------------------------------------------------------------------------


def test_knapsack_all_nonpositive():
    inst = sqrt_instance({1: 1.0, 2: 1.0, 3: 1.0}, n=4)
    res = oracle_knapsack(inst, 0, prices_for(inst, 0, {1: -1.0, 2: 0.0, 3: -0.1}))
    assert res.chosen == frozenset() and res.value == 0.0


def test_knapsack_unit_sizes_sqrt():
    inst = sqrt_instance({1: 1.0, 2: 1.0, 3: 1.0}, n=4)
    prices = prices_for(inst, 0, {1: 1.0, 2: 1.0, 3: 1.0})
    res = oracle_knapsack(inst, 0, prices, eps=0.1)
    assert res.chosen == frozenset({1, 2, 3})
    assert res.value == pytest.approx(math.sqrt(3.0), abs=1e-9)


def test_knapsack_rejects_wrong_model(two_agent_unit):
    with pytest.raises(ValueError, match="symmetric weighted"):
        oracle_knapsack(two_agent_unit, 0, prices_for(two_agent_unit, 0, {1: 1.0}))


def test_knapsack_ratio_vs_bruteforce():
    rng = np.random.default_rng(33)
    eps = 0.1
    for trial in range(60):
        n = int(rng.integers(3, 16))
        inst = gen_random(n, min(n - 1, 8), "symmetric", seed=900 + trial)
        i = int(rng.integers(0, n))
        senders = inst.senders_of[i]
        if not senders:
            continue
        prices = prices_for(inst, i, {j: float(rng.normal()) for j in senders})
        res = oracle_knapsack(inst, i, prices, eps=eps)
        brute = oracle_bruteforce(inst, i, prices)
        assert res.value >= brute.value / (1 + eps) ** 2 - 1e-9


# ---------------------------------------------------------------------------
# Continuous oracle
# ---------------------------------------------------------------------------


def grid_oracle_2d(instance, i, q, res=1e-3):
    """Independent oracle: exhaustive grid over [0,1]^2."""
    model = instance.utility
    js = sorted(instance.senders_of[i])
    best = 0.0
    ys = np.arange(0.0, 1.0 + res, res)
    s = [model.sizes[(i, j)] for j in js]
    f = model.f[i]
    for y1 in ys:
        for y2 in ys:
            d = s[0] * y1 + s[1] * y2
            if d <= 0:
                continue
            w = q[js[0]] * s[0] * y1 + q[js[1]] * s[1] * y2
            best = max(best, w * f(d) / d)
    return best


def test_continuous_all_negative():
    inst = sqrt_instance({1: 1.0, 2: 1.0}, n=3, floor=1e-6)
    res = oracle_continuous(inst, 0, prices_for(inst, 0, {1: -1.0, 2: -2.0}))
    assert res.value == 0.0 and not res.y


def test_continuous_two_positive():
    inst = sqrt_instance({1: 1.0, 2: 1.0}, n=3, floor=1e-6)
    res = oracle_continuous(inst, 0, prices_for(inst, 0, {1: 1.0, 2: 1.0}), eps=0.01)
    assert res.y == {1: 1.0, 2: 1.0}
    assert res.value == pytest.approx(math.sqrt(2.0), abs=1e-9)


def test_continuous_negative_sender_excluded():
    inst = sqrt_instance({1: 1.0, 2: 1.0}, n=3, floor=1e-6)
    res = oracle_continuous(inst, 0, prices_for(inst, 0, {1: 1.0, 2: -5.0}), eps=0.01)
    assert res.y == {1: 1.0}
    assert res.value == pytest.approx(1.0, abs=1e-9)


def test_continuous_vs_grid_oracle():
    rng = np.random.default_rng(8)
    eps = 0.05
    for trial in range(10):
        sizes = {1: float(rng.uniform(0.2, 1.5)), 2: float(rng.uniform(0.2, 1.5))}
        inst = sqrt_instance(sizes, n=3, floor=1e-6)
        q = {1: float(rng.normal()), 2: float(rng.normal())}
        res = oracle_continuous(inst, 0, prices_for(inst, 0, q), eps=eps)
        grid = grid_oracle_2d(inst, 0, q)
        assert res.value >= grid / (1 + eps) - 2e-3  # grid itself is approximate


def test_continuous_rejects_set_models(two_agent_unit):
    with pytest.raises(ValueError, match="unsupported concave family"):
        oracle_continuous(two_agent_unit, 0, prices_for(two_agent_unit, 0, {1: 1.0}))


# ---------------------------------------------------------------------------
# Imbalance sub-oracle
# ---------------------------------------------------------------------------


def test_imbalance_zero_prices_and_budget():
    d, g, v = oracle_imbalance(np.zeros(3), np.array([1.0, 2.0, 3.0]), 5.0, 0.0)
    assert np.all(d == 0.0) and np.all(g == 0.0) and v == 0.0
    d, g, v = oracle_imbalance(np.array([1.0]), np.array([1.0]), 0.0, 0.0)
    assert np.all(d == 0.0) and np.all(g == 0.0)


def test_imbalance_quadratic_closed_form():
    d, g, v = oracle_imbalance(np.array([3.0, 4.0]), np.zeros(2), 1.0, 0.0)
    np.testing.assert_allclose(d, [0.6, 0.8], atol=1e-12)
    assert v == pytest.approx(5.0, abs=1e-12)


def test_imbalance_grid_search_cross_check():
    # independent oracle: dense sweep over the disk sum(d^2) <= 1
    p = np.array([3.0, 4.0])
    best = 0.0
    for d1 in np.linspace(0, 1, 401):
        lim = math.sqrt(max(0.0, 1.0 - d1 * d1))
        d2 = lim
        best = max(best, p[0] * d1 + p[1] * d2)
    d, _, v = oracle_imbalance(p, np.zeros(2), 1.0, 0.0)
    assert v == pytest.approx(best, abs=1e-3)


def test_imbalance_kkt_stationarity_and_tight_budget():
    rng = np.random.default_rng(5)
    for a in (2.0, 3.0):
        cost = ConvexCost(a=a)
        p = rng.uniform(0.0, 2.0, size=6)
        p[rng.integers(0, 6)] = 0.0
        d, g, v = oracle_imbalance(p, np.zeros(6), 2.0, 0.0, g=cost)
        spent = sum(cost(x) for x in d)
        assert spent == pytest.approx(2.0, abs=1e-9)  # budget tight, p != 0
        lams = [p[i] / cost.derivative(d[i]) for i in range(6) if d[i] > 1e-12]
        assert max(lams) - min(lams) <= 1e-6  # stationarity: p_i = lam g'(d_i)
        assert all(d[i] <= 1e-12 for i in range(6) if p[i] == 0.0)  # compl. slackness


def test_imbalance_rejects_nonconvex():
    with pytest.raises(ValueError, match="convex"):
        ConvexCost(a=0.5)

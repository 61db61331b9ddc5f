from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnrsurv.errors import InvalidInput, UndefinedMetric
from dnrsurv.survival import brier_score, c_index, kaplan_meier, log_rank, significance_marker

from oracles import c_index_pairs

# 10-patient worksheet; "+" marks censoring: 1, 2, 2+, 3, 4, 4, 5+, 6, 7, 8+
T10 = np.array([1, 2, 2, 3, 4, 4, 5, 6, 7, 8], dtype=float)
E10 = np.array([1, 1, 0, 1, 1, 1, 0, 1, 1, 0])
# group A = patients 1, 3, 5, 7, 9 (1-based)
G10 = np.array(["A", "B"] * 5)


# ---------------------------------------------------------------- C-index

def test_c_index_perfect():
    assert c_index([2, 1], [1, 2], [1, 1]) == 1.0


def test_c_index_constant_half():
    rng = np.random.default_rng(0)
    assert c_index(np.zeros(20), rng.integers(1, 30, 20), rng.integers(0, 2, 20) | (np.arange(20) == 0)) == 0.5


def test_c_index_undefined():
    with pytest.raises(UndefinedMetric):
        c_index([1, 2], [1, 2], [0, 0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000))
def test_c_index_brute_force(seed):
    rng = np.random.default_rng(seed)
    eta = rng.integers(0, 5, 20).astype(float)  # coarse scores force ties
    t = rng.integers(1, 10, 20).astype(float)
    e = rng.integers(0, 2, 20)
    e[np.argmin(t)] = 1
    if (t == t.min()).all():
        return
    assert c_index(eta, t, e) == c_index_pairs(eta, t, e)


def test_c_index_drops_nan():
    eta = np.array([2.0, np.nan, 1.0])
    assert c_index(eta, [1, 2, 3], [1, 1, 1]) == 1.0


# ---------------------------------------------------------------- Kaplan-Meier

def test_km_uncensored():
    km = kaplan_meier([1, 2, 3], [1, 1, 1])
    assert np.allclose(km.survival, [2 / 3, 1 / 3, 0.0], atol=1e-15)


def test_km_all_censored():
    km = kaplan_meier([1, 2, 3], [0, 0, 0])
    assert km.survival.size == 0
    assert np.all(km([0.5, 2, 10]) == 1.0)


def test_km_worksheet():
    km = kaplan_meier(T10, E10)
    assert np.array_equal(km.time, [1, 2, 3, 4, 6, 7])
    assert np.array_equal(km.at_risk, [10, 9, 7, 6, 3, 2])
    want = [F(9, 10), F(8, 10), F(24, 35), F(16, 35), F(32, 105), F(16, 105)]
    assert np.allclose(km.survival, [float(w) for w in want], rtol=0, atol=1e-15)
    assert km(3.5) == pytest.approx(24 / 35)
    assert km(4, left=True) == pytest.approx(24 / 35)
    assert km(0.5) == 1.0


# ---------------------------------------------------------------- log-rank

def test_log_rank_worksheet():
    # per event time: (n, n_A, d, d_A)
    table = [(10, 5, 1, 1), (9, 4, 1, 0), (7, 3, 1, 0), (6, 3, 2, 1), (3, 1, 1, 0), (2, 1, 1, 1)]
    obs = sum(F(r[3]) for r in table)
    exp = sum(F(d * na, n) for n, na, d, _ in table)
    var = sum(F(d * (n - d), n - 1) * F(na * (n - na), n * n) for n, na, d, _ in table)
    assert obs == 3 and exp == F(202, 63)
    want = float((obs - exp) ** 2 / var)
    lr = log_rank(T10, E10, G10)
    assert lr.df == 1
    assert abs(lr.statistic - want) < 1e-10
    assert lr.observed[0] == 3 and lr.expected[0] == pytest.approx(float(exp), abs=1e-12)


def test_log_rank_identical_groups():
    t = np.concatenate([T10, T10])
    e = np.concatenate([E10, E10])
    lr = log_rank(t, e, np.repeat([0, 1], 10))
    assert lr.statistic == 0.0 and lr.p_value == 1.0


def test_log_rank_single_group():
    with pytest.raises(InvalidInput):
        log_rank(T10, E10, np.zeros(10))


def test_log_rank_three_groups_chi2():
    rng = np.random.default_rng(3)
    t = rng.exponential(size=60)
    e = np.ones(60, dtype=int)
    lr = log_rank(t, e, np.arange(60) % 3)
    assert lr.df == 2 and 0 <= lr.p_value <= 1


def test_log_rank_group_without_events():
    t = np.array([1, 2, 3, 4, 5, 6.0])
    e = np.array([1, 1, 1, 0, 0, 0])
    lr = log_rank(t, e, [0, 0, 0, 1, 1, 1])
    assert lr.observed[1] == 0 and np.isfinite(lr.statistic)


def test_markers():
    assert [significance_marker(p) for p in (0.0005, 0.005, 0.03, 0.07, 0.2)] == ["***", "**", "*", "+", ""]


# ---------------------------------------------------------------- Brier

def test_brier_constant_half():
    t = np.arange(1, 11, dtype=float)
    assert brier_score(0.5, t, np.ones(10), 5.5).score == pytest.approx(0.25)


def test_brier_perfect_predictor():
    t = np.arange(1, 11, dtype=float)
    s = (t > 5.5).astype(float)
    assert brier_score(s, t, np.ones(10), 5.5).score == 0.0


def test_brier_worksheet():
    t = np.array([1, 2, 3, 4, 5], dtype=float)
    e = np.array([1, 0, 1, 1, 0])
    s = np.array([0.2, 0.5, 0.4, 0.7, 0.9])
    # censoring KM: G = 1 before 2, 3/4 on [2, 5); patient 2 censored before 3.5 weighs 0
    want = (0.2 ** 2 / 1 + 0 + 0.4 ** 2 / 0.75 + 0.3 ** 2 / 0.75 + 0.1 ** 2 / 0.75) / 5
    b = brier_score(s, t, e, 3.5)
    assert b.score == pytest.approx(want, abs=1e-15)
    assert b.n_used == 5 and b.n_excluded == 0


def test_brier_heavy_censoring_weights_stay_positive():
    # an event time is still in its own censoring risk set, so G(t-) > 0 for usable records
    t = np.array([1, 2, 3, 4, 5, 6.0])
    e = np.array([0, 0, 0, 0, 1, 0])
    b = brier_score(np.full(6, 0.5), t, e, 5.0)
    assert b.n_excluded == 0 and b.n_used == 6
    # G(5-) = G(5) = 5/6 * 4/5 * 3/4 * 2/3 = 1/3 for both the event at 5 and the survivor at 6
    assert b.score == pytest.approx((0.25 * 3 + 0.25 * 3) / 6)


def test_brier_out_of_range():
    with pytest.raises(InvalidInput):
        brier_score(0.5, [1, 2], [1, 1], 10)

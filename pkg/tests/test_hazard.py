import numpy as np
import pytest

from dnrsurv.errors import SkippedCovariate
from dnrsurv.survival import fit_cox, hazard_ratio_ci, univariate_hr_table, wald_p


def test_ci_direct_exponentiation():
    hr, lo, hi = hazard_ratio_ci(0.6931, 0.1)
    assert hr == pytest.approx(2.000, abs=5e-4)
    assert lo == pytest.approx(np.exp(0.6931 - 0.196), rel=1e-14)
    assert hi == pytest.approx(np.exp(0.6931 + 0.196), rel=1e-14)
    assert (round(lo, 3), round(hi, 3)) == (1.644, 2.433)


def test_wald_p():
    assert wald_p(1.96, 1.0) == pytest.approx(0.05, abs=1e-4)
    assert wald_p(0.0, 1.0) == 1.0


def cohort(seed, n=200, effect=0.0):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 2, n)
    t = rng.exponential(np.exp(-effect * x))
    c = rng.exponential(3.0, n)
    return x, np.minimum(t, c), (t <= c).astype(int)


def test_binary_row_matches_fit():
    x, t, e = cohort(0, effect=0.7)
    (row,) = univariate_hr_table({"grade": x}, t, e)
    fit = fit_cox(x[:, None].astype(float), t, e)
    assert row.level == "1" and row.reference == "0"
    assert row.hr == pytest.approx(np.exp(fit.beta[0]), rel=1e-12)
    assert row.ci_low < row.hr < row.ci_high
    assert row.n == 200 and row.n_level == int(x.sum())


def test_one_vs_all_levels():
    rng = np.random.default_rng(1)
    stage = rng.choice(["I", "II", "III"], 150)
    t = rng.exponential(size=150)
    rows = univariate_hr_table({"stage": stage}, t, np.ones(150, dtype=int))
    assert [r.level for r in rows] == ["I", "II", "III"]
    assert all(r.reference == "" for r in rows)


def test_missing_dropped():
    x, t, e = cohort(2, n=100)
    vals = x.astype(object)
    vals[:10] = None
    (row,) = univariate_hr_table({"x": list(vals)}, t, e)
    assert row.n == 90


def test_single_level_skipped():
    t = np.arange(1.0, 11.0)
    with pytest.warns(SkippedCovariate):
        rows = univariate_hr_table({"flat": np.ones(10)}, t, np.ones(10, dtype=int))
    assert rows == []


def test_null_coverage():
    reps = 400
    cover = 0
    for seed in range(reps):
        x, t, e = cohort(seed)
        (row,) = univariate_hr_table({"x": x}, t, e)
        cover += row.ci_low <= 1.0 <= row.ci_high
    assert abs(cover / reps - 0.95) <= 0.03

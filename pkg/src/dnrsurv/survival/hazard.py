"""Univariate hazard-ratio tables (binary covariates and one-vs-all levels)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..errors import NonConverged, SkippedCovariate
from .cox import fit_cox

Z_95 = 1.96


@dataclass
class HrRow:
    covariate: str
    level: str
    reference: str  # "" for one-vs-all rows
    n: int
    n_level: int
    hr: float
    ci_low: float
    ci_high: float
    p_value: float


def hazard_ratio_ci(beta, se, z=Z_95):
    """(HR, lower, upper) from a Wald interval on the log scale."""
    return float(np.exp(beta)), float(np.exp(beta - z * se)), float(np.exp(beta + z * se))


def wald_p(beta, se) -> float:
    return float(2.0 * stats.norm.sf(abs(beta / se)))


def _is_missing(v) -> bool:
    if v is None:
        return True
    if isinstance(v, float) and np.isnan(v):
        return True
    return isinstance(v, str) and v.strip() == ""


def _row(name, level, reference, indicator, t, e):
    fit = fit_cox(indicator[:, None], t, e, names=[f"{name}={level}"])
    b, se = float(fit.beta[0]), float(fit.standard_errors[0])
    hr, lo, hi = hazard_ratio_ci(b, se)
    return HrRow(name, str(level), reference, t.size, int(indicator.sum()), hr, lo, hi, wald_p(b, se))


def univariate_hr_table(covariates: dict, time, event) -> list[HrRow]:
    """One univariate Cox model per covariate (or per level for non-binary ones).

    Binary covariates compare the second sorted level against the first.
    Covariates with three or more levels get one indicator per level against
    all others. Missing values (None, NaN, empty string) are dropped per
    covariate; ``n`` reports the records used.
    """
    t_all = np.asarray(time, dtype=float)
    e_all = np.asarray(event)
    rows = []
    for name, values in covariates.items():
        vals = list(values)
        keep = np.array([not _is_missing(v) for v in vals])
        t, e = t_all[keep], e_all[keep]
        kept = [str(v) for v, k in zip(vals, keep) if k]
        levels = sorted(set(kept))
        if len(levels) < 2:
            warnings.warn(f"covariate {name!r} has fewer than two levels", SkippedCovariate, stacklevel=2)
            continue
        arr = np.array(kept)
        if len(levels) == 2:
            pairs = [(levels[1], levels[0])]
        else:
            pairs = [(lev, "") for lev in levels]
        for level, ref in pairs:
            try:
                rows.append(_row(name, level, ref, (arr == level).astype(float), t, e))
            except NonConverged as exc:
                warnings.warn(f"{name}={level}: {exc}", SkippedCovariate, stacklevel=2)
    return rows

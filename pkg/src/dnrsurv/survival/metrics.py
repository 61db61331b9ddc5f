"""Evaluation statistics: concordance, Brier score, Kaplan-Meier, log-rank."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import stats

from ..errors import InvalidInput, UndefinedMetric
from .cox import check_records


def c_index(eta, time, event) -> float:
    """Harrell's concordance of risk scores ``eta`` (higher = earlier failure).

    A pair (i, j) is comparable when t_i < t_j and i had the event; tied
    scores count one half. Records with NaN scores are dropped.
    """
    t, e = check_records(time, event)
    eta = np.asarray(eta, dtype=float)
    if eta.shape != t.shape:
        raise InvalidInput("eta must have one entry per record")
    ok = ~np.isnan(eta)
    t, e, eta = t[ok], e[ok], eta[ok]
    comparable = (t[:, None] < t[None, :]) & e[:, None]
    n_comp = int(comparable.sum())
    if n_comp == 0:
        raise UndefinedMetric("no comparable pairs")
    diff = eta[:, None] - eta[None, :]
    concordant = np.sum(comparable & (diff > 0))
    ties = np.sum(comparable & (diff == 0))
    return float((concordant + 0.5 * ties) / n_comp)


@dataclass
class KmCurve:
    time: np.ndarray  # distinct event times
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray
    censor_times: np.ndarray

    def __call__(self, t, left=False):
        """S(t); with ``left=True`` the left limit S(t-)."""
        side = "left" if left else "right"
        pos = np.searchsorted(self.time, np.asarray(t, dtype=float), side=side)
        s = np.concatenate([[1.0], self.survival])
        return s[pos]


def kaplan_meier(time, event) -> KmCurve:
    """Product-limit estimate. Events at a time are processed before censorings."""
    t, e = check_records(time, event)
    times = np.unique(t[e])
    at_risk = np.array([(t >= u).sum() for u in times], dtype=int)
    d = np.array([((t == u) & e).sum() for u in times], dtype=int)
    surv = np.cumprod(1.0 - d / at_risk) if times.size else np.array([])
    return KmCurve(times, surv, at_risk, d, np.sort(t[~e]))


class BrierScore(NamedTuple):
    score: float
    t_eval: float
    n_used: int
    n_excluded: int


def brier_score(surv_pred, time, event, t_eval) -> BrierScore:
    """Inverse-probability-of-censoring weighted Brier score at ``t_eval``.

    ``surv_pred[i]`` is the predicted S_i(t_eval). Censoring weights come from
    the Kaplan-Meier estimate G of the censoring distribution: events up to
    t_eval weigh 1/G(t_i-), survivors past t_eval weigh 1/G(t_eval), and
    records censored before t_eval weigh zero. Records whose weight would
    divide by G = 0 are excluded from the mean and counted.
    """
    t, e = check_records(time, event)
    s = np.broadcast_to(np.asarray(surv_pred, dtype=float), t.shape)
    if t_eval < t.min() or t_eval > t.max():
        raise InvalidInput(f"t_eval={t_eval} outside the follow-up range")
    # censoring KM: censorings are the "events"; at ties, deaths leave first
    cens = _censoring_km(t, e)

    died = e & (t <= t_eval)
    alive = t > t_eval
    g = np.ones_like(t)
    g[died] = cens(t[died], left=True)
    g[alive] = cens(np.full(alive.sum(), t_eval))
    contrib = np.zeros_like(t)
    usable = np.ones(t.size, dtype=bool)
    zero = (died | alive) & (g <= 0)
    usable[zero] = False
    m = died & ~zero
    contrib[m] = s[m] ** 2 / g[m]
    m = alive & ~zero
    contrib[m] = (1.0 - s[m]) ** 2 / g[m]
    n_used = int(usable.sum())
    if n_used == 0:
        raise InvalidInput("no usable records for the Brier score")
    return BrierScore(float(contrib[usable].sum() / n_used), float(t_eval), n_used, int(zero.sum()))


def _censoring_km(t, e) -> KmCurve:
    times = np.unique(t[~e])
    # a death at time u is not at risk of being censored at u
    at_risk = np.array([((t > u) | ((t == u) & ~e)).sum() for u in times], dtype=int)
    d = np.array([((t == u) & ~e).sum() for u in times], dtype=int)
    surv = np.cumprod(1.0 - d / at_risk) if times.size else np.array([])
    return KmCurve(times, surv, at_risk, d, np.sort(t[e]))


class LogRank(NamedTuple):
    statistic: float
    p_value: float
    df: int
    observed: np.ndarray
    expected: np.ndarray


def log_rank(time, event, groups) -> LogRank:
    """K-group log-rank test with hypergeometric variance, df = groups - 1."""
    t, e = check_records(time, event)
    groups = np.asarray(groups)
    labels = np.unique(groups)
    if labels.size < 2:
        raise InvalidInput("log-rank needs at least two non-empty groups")
    gi = np.searchsorted(labels, groups)
    k = labels.size
    obs = np.zeros(k)
    exp = np.zeros(k)
    var = np.zeros((k, k))
    for u in np.unique(t[e]):
        risk = t >= u
        n = risk.sum()
        d_mask = (t == u) & e
        d = d_mask.sum()
        n_g = np.bincount(gi[risk], minlength=k).astype(float)
        d_g = np.bincount(gi[d_mask], minlength=k).astype(float)
        obs += d_g
        exp += d * n_g / n
        if n > 1:
            frac = n_g / n
            var += d * (n - d) / (n - 1) * (np.diag(frac) - np.outer(frac, frac))
    diff = (obs - exp)[:-1]
    v = var[:-1, :-1]
    if np.allclose(diff, 0.0, atol=0.0):
        stat = 0.0
    else:
        stat = float(diff @ np.linalg.pinv(v) @ diff)
    df = k - 1
    return LogRank(stat, float(stats.chi2.sf(stat, df)), df, obs, exp)


def significance_marker(p) -> str:
    """'+', '*', '**', '***' for p below 0.1, 0.05, 0.01, 0.001."""
    for cut, mark in ((0.001, "***"), (0.01, "**"), (0.05, "*"), (0.1, "+")):
        if p < cut:
            return mark
    return ""

"""Forward covariate selection by likelihood ratio, and leave-one-out predictors."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..errors import InvalidInput, NonConverged
from .cox import CoxFit, _RiskStructure, efron_loglik, fit_cox

log = logging.getLogger(__name__)


@dataclass
class SelectionStep:
    candidate: str
    column: int
    lr: float
    p_value: float
    accepted: bool


@dataclass
class SelectionTrace:
    steps: list = field(default_factory=list)
    selected: list = field(default_factory=list)  # column indices
    selected_names: list = field(default_factory=list)
    excluded: list = field(default_factory=list)  # names of constant columns dropped up front
    skipped: list = field(default_factory=list)  # (step, name, reason)

    @property
    def n_feat(self) -> int:
        return sum(s.accepted for s in self.steps)


def lr_statistic(ll_new, ll_prev) -> float:
    """-2 [ll(prev) - ll(new)]: twice the log-likelihood gain of the larger model."""
    return -2.0 * (ll_prev - ll_new)


def forward_select(X, time, event, alpha=0.05, names=None):
    """Greedy forward selection with a 1-df likelihood-ratio test per step.

    At every step each remaining column is added to the current model in turn;
    the candidate with the smallest p-value (lowest column index on ties) is
    accepted if ``p < alpha``, otherwise selection stops. Constant columns
    (including structurally-missing all-zero descriptor rows) are excluded up
    front. Candidates whose augmented fit does not converge are skipped.

    Returns ``(trace, fit)``; ``fit`` is None when nothing was selected.
    """
    if not 0.0 <= alpha < 1.0:
        raise InvalidInput("alpha must lie in [0, 1)")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    p = X.shape[1]
    names = list(names) if names is not None else [f"x{j}" for j in range(p)]
    rs = _RiskStructure(time, event)
    trace = SelectionTrace()
    constant = np.ptp(X, axis=0) == 0
    trace.excluded = [names[j] for j in np.flatnonzero(constant)]
    remaining = [j for j in range(p) if not constant[j]]

    current: list[int] = []
    fit: CoxFit | None = None
    ll_prev = efron_loglik(np.zeros(1), np.zeros((rs.n, 1)), None, None, structure=rs, derivatives=False)
    while remaining:
        best = None
        for j in remaining:
            cols = current + [j]
            beta0 = np.append(fit.beta, 0.0) if fit is not None else None
            try:
                cand = fit_cox(X[:, cols], None, None, beta0=beta0, structure=rs,
                               names=[names[c] for c in cols])
            except NonConverged as exc:
                trace.skipped.append((len(trace.steps), names[j], str(exc)))
                continue
            lr = max(lr_statistic(cand.log_likelihood, ll_prev), 0.0)
            pval = float(stats.chi2.sf(lr, df=1))
            if best is None or pval < best[1]:
                best = (j, pval, lr, cand)
        if best is None:
            break
        j, pval, lr, cand = best
        accepted = pval < alpha
        trace.steps.append(SelectionStep(names[j], j, lr, pval, accepted))
        if not accepted:
            break
        current.append(j)
        remaining.remove(j)
        fit = cand
        ll_prev = cand.log_likelihood
        log.info("selected %s (LR=%.3f, p=%.3g)", names[j], lr, pval)
    trace.selected = current
    trace.selected_names = [names[j] for j in current]
    return trace, fit


def chi2_critical(alpha, df=1) -> float:
    return float(stats.chi2.isf(alpha, df))


def loocv_linear_predictors(X, time, event, warm_start=True, n_jobs=1, order=None):
    """Out-of-sample linear predictors eta_i = x_i . beta^{-i}.

    Each beta^{-i} is refit on every record except ``i``. Warm starts begin
    Newton at the full-data estimate. Folds that fail to converge give NaN.
    ``order`` only changes the schedule in which folds are evaluated.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] == 0:
        raise InvalidInput("selected covariate set is empty")
    t = np.asarray(time, dtype=float)
    e = np.asarray(event)
    n = t.size
    beta_full = fit_cox(X, t, e).beta if warm_start else None

    def one(i):
        keep = np.arange(n) != i
        if not e[keep].any():
            return i, np.nan
        try:
            f = fit_cox(X[keep], t[keep], e[keep], beta0=beta_full)
        except NonConverged:
            return i, np.nan
        return i, float(X[i] @ f.beta)

    idx = list(range(n)) if order is None else [int(i) for i in order]
    eta = np.full(n, np.nan)
    if n_jobs == 1:
        results = map(one, idx)
    else:
        pool = ThreadPoolExecutor(max_workers=n_jobs)
        results = pool.map(one, idx)
    for i, v in results:
        eta[i] = v
    if n_jobs != 1:
        pool.shutdown()
    return eta

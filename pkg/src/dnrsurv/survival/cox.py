"""Cox proportional hazards with Efron's tie correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInput, NonConverged

GRAD_TOL = 1e-8
REL_LL_TOL = 1e-10
# standardized |beta| beyond this means a hazard ratio of e^25 per SD: treat as separation
SEPARATION_LIMIT = 25.0


def check_records(time, event):
    t = np.asarray(time, dtype=float)
    e = np.asarray(event)
    if t.ndim != 1 or t.shape != e.shape:
        raise InvalidInput("time and event must be 1-D arrays of equal length")
    if t.size == 0:
        raise InvalidInput("no records")
    if not np.all(np.isfinite(t)) or np.any(t <= 0):
        raise InvalidInput("times must be finite and positive")
    if not np.all(np.isin(e, (0, 1))):
        raise InvalidInput("events must be 0 or 1")
    return t, e.astype(bool)


class _RiskStructure:
    """Sorted layout of the records, reusable for every beta."""

    def __init__(self, time, event):
        t, e = check_records(time, event)
        # ascending time, events before censorings at equal times
        self.order = np.lexsort((~e, t))
        ts, es = t[self.order], e[self.order]
        self.n = t.size
        self.event_sorted = es
        # for every distinct event time: first index of that time (risk set = suffix)
        ev_times = np.unique(ts[es])
        self.risk_start = np.searchsorted(ts, ev_times, side="left")
        self.d = np.bincount(np.searchsorted(ev_times, ts[es]), minlength=ev_times.size)
        ev_idx = np.flatnonzero(es)
        self.event_group = np.searchsorted(ev_times, ts[ev_idx])
        self.event_idx = ev_idx  # positions in sorted order
        # Efron: one term per tied event, fraction l/d for l = 0..d-1
        self.term_group = np.repeat(np.arange(ev_times.size), self.d)
        offsets = np.cumsum(self.d) - self.d
        self.term_frac = (np.arange(self.d.sum()) - np.repeat(offsets, self.d)) / np.repeat(self.d, self.d)
        self.event_times = ev_times


def efron_loglik(beta, X, time, event, structure: _RiskStructure | None = None, derivatives=True):
    """Log partial likelihood (Efron ties) with gradient and Hessian.

    Returns ``(ll, grad, hess)``; with ``derivatives=False`` only ``ll``.
    Exponentials are taken relative to the largest linear predictor (per risk
    set when needed) so large values neither overflow nor underflow.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    rs = structure or _RiskStructure(time, event)
    if X.shape[0] != rs.n:
        raise InvalidInput("X rows must match the number of records")
    if X.shape[1] != beta.size:
        raise InvalidInput("beta length must match X columns")
    Xs = X[rs.order]
    eta = Xs @ beta
    if rs.event_idx.size == 0:
        p = beta.size
        return 0.0 if not derivatives else (0.0, np.zeros(p), np.zeros((p, p)))
    sums = _group_sums(eta, Xs, rs, derivatives)
    if sums is None:
        # a risk set underflowed under the global shift: rescale each one locally
        sums = _group_sums_local(eta, Xs, rs, derivatives)
    shift, s_r, s_d, z_r, z_d, w_r, w_d = sums
    tg, fr = rs.term_group, rs.term_frac
    phi = s_r[tg] - fr * s_d[tg]
    ll = float(np.sum(eta[rs.event_idx]) - np.sum(np.log(phi) + shift[tg]))
    if not derivatives:
        return ll
    z = z_r[tg] - fr[:, None] * z_d[tg]
    ratio = z / phi[:, None]
    grad = Xs[rs.event_idx].sum(axis=0) - ratio.sum(axis=0)
    w = w_r[tg] - fr[:, None, None] * w_d[tg]
    hess = -(np.sum(w / phi[:, None, None], axis=0) - ratio.T @ ratio)
    return ll, grad, hess


def _group_sums(eta, Xs, rs, derivatives):
    """Risk-set and tied-event sums of theta, theta x, theta x x' per event time.

    Uses one shift (the maximum linear predictor) for all groups, so risk
    sets can be read off reverse cumulative sums. Returns None when a
    risk-set sum underflows.
    """
    n_groups = rs.d.size
    g = rs.event_group
    top = eta.max()
    theta = np.exp(eta - top)
    rc0 = np.cumsum(theta[::-1])[::-1]
    s_r = rc0[rs.risk_start]
    s_d = np.bincount(g, weights=theta[rs.event_idx], minlength=n_groups)
    phi_min = s_r - (1.0 - 1.0 / rs.d) * s_d
    if not np.all(phi_min > 1e-250):
        return None
    shift = np.full(n_groups, top)
    if not derivatives:
        return shift, s_r, s_d, None, None, None, None
    p = Xs.shape[1]
    tx = theta[:, None] * Xs
    z_r = np.cumsum(tx[::-1], axis=0)[::-1][rs.risk_start]
    z_d = np.zeros((n_groups, p))
    np.add.at(z_d, g, tx[rs.event_idx])
    txx = tx[:, :, None] * Xs[:, None, :]
    w_r = np.cumsum(txx[::-1], axis=0)[::-1][rs.risk_start]
    w_d = np.zeros((n_groups, p, p))
    np.add.at(w_d, g, txx[rs.event_idx])
    return shift, s_r, s_d, z_r, z_d, w_r, w_d


def _group_sums_local(eta, Xs, rs, derivatives):
    """Same sums as :func:`_group_sums`, each group shifted by its own risk-set maximum."""
    n_groups = rs.d.size
    p = Xs.shape[1]
    shift = np.empty(n_groups)
    s_r, s_d = np.empty(n_groups), np.empty(n_groups)
    z_r, z_d = np.zeros((n_groups, p)), np.zeros((n_groups, p))
    w_r, w_d = np.zeros((n_groups, p, p)), np.zeros((n_groups, p, p))
    for k in range(n_groups):
        start = rs.risk_start[k]
        ev = rs.event_idx[rs.event_group == k]
        m = eta[start:].max()
        th = np.exp(eta[start:] - m)
        th_d = np.exp(eta[ev] - m)
        shift[k] = m
        s_r[k], s_d[k] = th.sum(), th_d.sum()
        if derivatives:
            xr, xd = Xs[start:], Xs[ev]
            z_r[k], z_d[k] = th @ xr, th_d @ xd
            w_r[k] = (xr * th[:, None]).T @ xr
            w_d[k] = (xd * th_d[:, None]).T @ xd
    return shift, s_r, s_d, z_r, z_d, w_r, w_d


def breslow_loglik(beta, X, time, event) -> float:
    """Breslow partial likelihood by explicit risk-set enumeration.

    Deliberately loop based; kept as an independent cross-check of
    :func:`efron_loglik` (both agree when event times are distinct).
    """
    t, e = check_records(time, event)
    X = np.asarray(X, dtype=float).reshape(t.size, -1)
    eta = X @ np.atleast_1d(beta)
    ll = 0.0
    for i in range(t.size):
        if e[i]:
            risk = [j for j in range(t.size) if t[j] >= t[i]]
            ll += eta[i] - np.log(sum(np.exp(eta[j]) for j in risk))
    return float(ll)


@dataclass
class CoxFit:
    covariate_names: list
    beta: np.ndarray
    log_likelihood: float
    null_log_likelihood: float
    observed_information: np.ndarray
    converged: bool
    newton_iterations: int
    singular: bool = False
    notes: list = field(default_factory=list)

    @property
    def standard_errors(self) -> np.ndarray:
        info = self.observed_information
        if self.singular:
            return np.sqrt(np.diag(np.linalg.pinv(info)))
        return np.sqrt(np.diag(np.linalg.inv(info)))

    @property
    def hazard_ratios(self) -> np.ndarray:
        return np.exp(self.beta)

    def linear_predictor(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float).reshape(-1, self.beta.size) @ self.beta


def fit_cox(X, time, event, ridge_epsilon=1e-9, names=None, beta0=None, max_iter=100,
            structure=None) -> CoxFit:
    """Newton-Raphson maximization of the Efron partial likelihood.

    Starts from ``beta0`` (zeros by default) and halves the step until the
    likelihood does not decrease. Converged when max |gradient| < 1e-8 or the
    relative log-likelihood change drops below 1e-10. A singular information
    matrix is stabilized with ``ridge_epsilon`` on the diagonal and flagged.
    Raises NonConverged on monotone likelihood (separation) or when the
    iteration budget runs out.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    rs = structure or _RiskStructure(time, event)
    if X.shape[0] != rs.n:
        raise InvalidInput("X rows must match the number of records")
    p = X.shape[1]
    if p < 1:
        raise InvalidInput("need at least one covariate")
    if rs.event_idx.size == 0:
        raise InvalidInput("need at least one event")
    names = list(names) if names is not None else [f"x{j}" for j in range(p)]

    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    null_ll = efron_loglik(np.zeros(p), X, None, None, structure=rs, derivatives=False)
    ll, grad, hess = efron_loglik(beta, X, None, None, structure=rs)
    notes = []
    singular = False
    converged = False
    it = 0
    scale = np.maximum(X.std(axis=0), 1e-300)
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad)) < GRAD_TOL:
            converged = True
            it -= 1
            break
        info = -hess
        ev = np.linalg.eigvalsh(info)
        if ev[0] <= 1e-10 * max(1.0, ev[-1]):
            if not singular:
                notes.append("singular information matrix; ridge applied")
            singular = True
            info = info + ridge_epsilon * np.eye(p) + max(0.0, -ev[0]) * np.eye(p)
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(info, grad, rcond=None)[0]
        new_ll = -np.inf
        for _ in range(60):
            cand = beta + step
            new_ll = efron_loglik(cand, X, None, None, structure=rs, derivatives=False)
            if np.isfinite(new_ll) and new_ll >= ll - 1e-12 * abs(ll):
                break
            step = step / 2
        else:
            raise NonConverged("step halving failed to improve the likelihood")
        beta = cand
        old_ll = ll
        ll, grad, hess = efron_loglik(beta, X, None, None, structure=rs)
        if abs(ll - old_ll) <= REL_LL_TOL * max(abs(old_ll), 1e-300):
            converged = True
            break
    if not converged:
        raise NonConverged(f"no convergence after {max_iter} Newton iterations (beta={beta})")
    std_beta = np.abs(beta) * scale
    if np.any(std_beta > SEPARATION_LIMIT):
        bad = [names[j] for j in np.flatnonzero(std_beta > SEPARATION_LIMIT)]
        raise NonConverged(f"monotone likelihood (perfect separation) in {bad}")
    info = -hess
    ev = np.linalg.eigvalsh(info)
    if ev[0] <= 1e-10 * max(1.0, ev[-1]):
        singular = True
        if not notes:
            notes.append("singular information matrix at optimum")
    return CoxFit(names, beta, ll, null_ll, info, converged, it, singular, notes)


def breslow_baseline(eta, time, event):
    """Breslow cumulative baseline hazard at the distinct event times.

    Returns ``(event_times, cumulative_hazard)`` for ``exp(eta)``-scaled risks.
    """
    t, e = check_records(time, event)
    eta = np.asarray(eta, dtype=float)
    shift = eta.max()
    theta = np.exp(eta - shift)
    order = np.argsort(t, kind="stable")
    ts, th = t[order], theta[order]
    risk = np.cumsum(th[::-1])[::-1]
    ev_times, counts = np.unique(t[e], return_counts=True)
    start = np.searchsorted(ts, ev_times, side="left")
    increments = counts / risk[start] * np.exp(-shift)
    return ev_times, np.cumsum(increments)


def predict_survival(eta, baseline, t_eval) -> np.ndarray:
    """S_i(t_eval) = exp(-H0(t_eval) exp(eta_i)) with a step-function baseline."""
    times, cumhaz = baseline
    pos = np.searchsorted(times, t_eval, side="right")
    h0 = cumhaz[pos - 1] if pos > 0 else 0.0
    return np.exp(-h0 * np.exp(np.asarray(eta, dtype=float)))

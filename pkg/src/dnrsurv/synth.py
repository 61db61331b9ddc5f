"""Seeded synthetic cohorts: tile grids, patch features and survival outcomes.

Each patient gets one or more slides whose tiles carry a spatially smooth
cluster labeling. Tile features are the cluster prototype plus Gaussian
noise. The true descriptor of each patient drives an exponential
proportional-hazards survival time, censored by an independent exponential
whose rate is tuned to a target censoring fraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import descriptor
from .errors import InvalidInput

# streams of the seed sequence, so outputs do not depend on generation order
_STREAM_GRID, _STREAM_PROTO, _STREAM_SURV = 0, 1, 2


def default_beta(k):
    """Planted effects: frequency of clusters 0/1 and the 2 -> 3 transition."""
    beta = np.zeros(k + k * k)
    beta[0] = 6.0
    beta[1] = -6.0
    beta[k + 2 * k + 3] = 4.0
    return beta


@dataclass
class SynthConfig:
    n_patients: int = 1000
    grid_rows: int = 12
    grid_cols: int = 12
    slides_per_patient: int = 1
    k_true: int = 8
    flip_prob: float = 0.1
    smoothing_sweeps: int = 3
    dirichlet_alpha: float = 1.0
    feature_dim: int = 16
    noise_sigma: float = 0.3
    beta_star: np.ndarray | None = None  # length K + K^2; None -> default_beta
    censoring_rate: float = 0.3
    baseline_hazard: float = 1.0 / 1000.0  # per day
    neighborhood: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.k_true < 2:
            raise InvalidInput("k_true must be at least 2")
        if not 0.0 <= self.censoring_rate < 1.0:
            raise InvalidInput("censoring_rate must lie in [0, 1)")
        if self.noise_sigma < 0:
            raise InvalidInput("noise_sigma must be non-negative")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise InvalidInput("flip_prob must lie in [0, 1]")
        if min(self.n_patients, self.grid_rows, self.grid_cols, self.slides_per_patient) < 1:
            raise InvalidInput("sizes must be positive")
        if self.beta_star is None:
            self.beta_star = default_beta(self.k_true)
        self.beta_star = np.asarray(self.beta_star, dtype=float)
        if self.beta_star.shape != (self.k_true + self.k_true ** 2,):
            raise InvalidInput(f"beta_star must have length {self.k_true + self.k_true ** 2}")


@dataclass
class SynthCohort:
    config: SynthConfig
    patient_ids: list
    features: np.ndarray  # (P, D)
    patch_ids: list
    patch_patient: list
    patch_slide: list
    rows: np.ndarray
    cols: np.ndarray
    true_labels: np.ndarray
    prototypes: np.ndarray
    descriptors: np.ndarray  # (n, K + K^2) from the true labels
    time: np.ndarray
    event: np.ndarray
    achieved_censoring: float
    notes: list = field(default_factory=list)


def smooth_labels(rng, rows, cols, k, proportions, sweeps, flip_prob):
    """Random labeling relaxed by neighborhood majority votes with random flips."""
    lab = rng.choice(k, size=(rows, cols), p=proportions)
    for _ in range(sweeps):
        counts = np.zeros((k, rows, cols))
        idx = np.arange(k)[:, None, None]
        padded = np.pad(lab, 1, constant_values=-1)
        for dr, dc in ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)):
            shifted = padded[1 + dr:1 + dr + rows, 1 + dc:1 + dc + cols]
            counts += shifted[None] == idx
        # random tie-break between equally frequent labels
        counts += rng.random(counts.shape) * 0.5
        lab = counts.argmax(axis=0)
        flip = rng.random((rows, cols)) < flip_prob
        lab[flip] = rng.choice(k, size=int(flip.sum()), p=proportions)
    return lab


def _tune_censoring(u_event, u_cens, hazard, target):
    """Censoring rate c for C = -log(U)/c hitting ``target`` censored fraction."""
    t_event = -np.log(u_event) / hazard
    e_cens = -np.log(u_cens)

    def frac(c):
        return np.mean(e_cens / c < t_event) if c > 0 else 0.0

    if target <= 0:
        return 0.0, t_event, np.ones_like(t_event, dtype=int), 0.0
    # frac is a non-decreasing step function of c: bisect for the smallest rate reaching the target
    lo, hi = 0.0, 1.0
    while frac(hi) < target and hi < 1e12:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if frac(mid) >= target:
            hi = mid
        else:
            lo = mid
    c = hi
    t_cens = e_cens / c
    event = (t_event <= t_cens).astype(int)
    time = np.minimum(t_event, t_cens)
    return c, time, event, float(1.0 - event.mean())


def generate(config: SynthConfig | None = None) -> SynthCohort:
    cfg = config or SynthConfig()
    k = cfg.k_true
    proto_rng = np.random.default_rng([cfg.seed, _STREAM_PROTO])
    prototypes = proto_rng.standard_normal((k, cfg.feature_dim))
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)

    feats, pids, ppat, pslide, rows, cols, labels = [], [], [], [], [], [], []
    patient_ids = [f"P{p:04d}" for p in range(cfg.n_patients)]
    desc = np.zeros((cfg.n_patients, k + k * k))
    rr, cc = np.meshgrid(np.arange(cfg.grid_rows), np.arange(cfg.grid_cols), indexing="ij")
    for p, pid in enumerate(patient_ids):
        rng = np.random.default_rng([cfg.seed, _STREAM_GRID, p])
        props = rng.dirichlet(np.full(k, cfg.dirichlet_alpha))
        grids = []
        for s in range(cfg.slides_per_patient):
            sid = f"{pid}_S{s}"
            lab = smooth_labels(rng, cfg.grid_rows, cfg.grid_cols, k, props, cfg.smoothing_sweeps, cfg.flip_prob)
            grids.append(descriptor.SlideGrid.from_labels(sid, lab))
            flat = lab.ravel()
            noise = rng.standard_normal((flat.size, cfg.feature_dim)) * cfg.noise_sigma
            feats.append(prototypes[flat] + noise)
            labels.append(flat)
            rows.append(rr.ravel())
            cols.append(cc.ravel())
            pids.extend(f"{sid}_{r}_{c}" for r, c in zip(rr.ravel(), cc.ravel()))
            ppat.extend([pid] * flat.size)
            pslide.extend([sid] * flat.size)
        desc[p] = descriptor.flatten(descriptor.build(pid, grids, k, cfg.neighborhood))

    surv_rng = np.random.default_rng([cfg.seed, _STREAM_SURV])
    eta = desc @ cfg.beta_star
    eta = eta - eta.mean()
    hazard = cfg.baseline_hazard * np.exp(eta)
    u_event = surv_rng.random(cfg.n_patients)
    u_cens = surv_rng.random(cfg.n_patients)
    _, time, event, achieved = _tune_censoring(u_event, u_cens, hazard, cfg.censoring_rate)
    notes = []
    if abs(achieved - cfg.censoring_rate) > 0.05:
        notes.append(f"censoring target {cfg.censoring_rate} not reached; achieved {achieved:.3f}")
    # whole days, at least one; ties are expected and handled by the Efron likelihood
    time = np.maximum(np.ceil(time), 1.0)

    return SynthCohort(
        config=cfg,
        patient_ids=patient_ids,
        features=np.vstack(feats),
        patch_ids=pids,
        patch_patient=ppat,
        patch_slide=pslide,
        rows=np.concatenate(rows),
        cols=np.concatenate(cols),
        true_labels=np.concatenate(labels),
        prototypes=prototypes,
        descriptors=desc,
        time=time,
        event=event,
        achieved_censoring=achieved,
        notes=notes,
    )


def cox_sample(beta, n, seed=0, censoring_rate=0.0, baseline_hazard=1.0):
    """Gaussian covariates with exponential PH survival times.

    Returns ``(X, time, event)``; used for coefficient-recovery checks.
    """
    beta = np.asarray(beta, dtype=float)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, beta.size))
    hazard = baseline_hazard * np.exp(X @ beta)
    _, time, event, _ = _tune_censoring(rng.random(n), rng.random(n), hazard, censoring_rate)
    return X, time, event

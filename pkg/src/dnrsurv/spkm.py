"""Spherical k-means on unit-norm embeddings."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateData, InvalidInput

ASSIGN_NORM_TOL = 1e-3


@dataclass
class ClusterModel:
    centroids: np.ndarray  # (K, d), unit rows
    inertia: float = 0.0
    iterations_run: int = 0
    inertia_history: list = field(default_factory=list)
    repaired: int = 0

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _unit_rows(x, tol=1e-6, what="embeddings"):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise InvalidInput(f"{what} must be a 2-D array")
    norms = np.linalg.norm(x, axis=1)
    if np.any(np.abs(norms - 1.0) > tol):
        if np.any(norms == 0):
            raise InvalidInput(f"{what} contain zero rows")
        x = x / norms[:, None]
    return x


def _seed_plus_plus(x, k, rng):
    """k-means++ seeding with cosine distance."""
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    dist = np.maximum(1.0 - x @ x[chosen[0]], 0.0)
    for _ in range(1, k):
        total = dist.sum()
        if total <= 0:
            raise DegenerateData(f"fewer than {k} distinct directions in the data")
        nxt = int(rng.choice(n, p=dist / total))
        chosen.append(nxt)
        dist = np.minimum(dist, np.maximum(1.0 - x @ x[nxt], 0.0))
    return x[chosen].copy()


def _assign(x, centroids):
    sims = x @ centroids.T
    labels = np.argmax(sims, axis=1)  # first max wins ties
    return labels, sims[np.arange(x.shape[0]), labels]


def fit(embeddings, k, seed=0, max_iter=100, tol=0.0, init=None) -> ClusterModel:
    """Fit K unit centroids by alternating cosine assignment and normalized means.

    Stops when the assignment no longer changes, after ``max_iter`` sweeps, or
    when the relative inertia decrease falls to ``tol`` or below (``tol=0``
    disables that test). Empty clusters are reseeded with the point farthest
    from its centroid. ``init`` overrides the k-means++ seeding.
    """
    x = _unit_rows(embeddings)
    n = x.shape[0]
    if k < 2:
        raise InvalidInput("K must be at least 2")
    if n < k:
        raise InvalidInput(f"need at least K={k} points, got {n}")
    if np.all(np.abs(x - x[0]).max(axis=1) < 1e-12):
        raise DegenerateData("all points identical")
    rng = np.random.default_rng(seed)
    if init is None:
        centroids = _seed_plus_plus(x, k, rng)
    else:
        centroids = _unit_rows(init, what="init")
        if centroids.shape != (k, x.shape[1]):
            raise InvalidInput("init must have shape (K, d)")

    labels = None
    history = []
    repaired = 0
    it = 0
    for it in range(1, max_iter + 1):
        new_labels, best = _assign(x, centroids)
        history.append(float(np.sum(1.0 - best)))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        if tol > 0 and len(history) > 1 and history[-2] - history[-1] <= tol * abs(history[-2]):
            labels = new_labels
            break
        labels = new_labels

        counts = np.bincount(labels, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            cur = np.sum(x * centroids[labels], axis=1)
            # only take points whose cluster keeps at least one other member
            movable = counts[labels] > 1
            if not movable.any():
                raise DegenerateData("cannot repair empty cluster")
            far = int(np.argmin(np.where(movable, cur, np.inf)))
            counts[labels[far]] -= 1
            labels[far] = empty
            counts[empty] = 1
            repaired += 1

        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        norms = np.linalg.norm(sums, axis=1)
        # a cluster whose members cancel out keeps its previous centroid
        ok = norms > 1e-12
        centroids[ok] = sums[ok] / norms[ok, None]

    labels, best = _assign(x, centroids)
    inertia = float(np.sum(1.0 - best))
    return ClusterModel(centroids, inertia, it, history, repaired)


def assign(model: ClusterModel, z) -> int:
    """Index of the centroid with the largest cosine similarity to ``z``."""
    z = np.asarray(z, dtype=float)
    norm = np.linalg.norm(z)
    if norm == 0:
        raise InvalidInput("cannot assign a zero vector")
    if abs(norm - 1.0) > ASSIGN_NORM_TOL:
        warnings.warn(f"input norm {norm:.4g} is not unit; normalizing", stacklevel=2)
    return int(np.argmax(model.centroids @ (z / norm)))


def assign_many(model: ClusterModel, embeddings) -> np.ndarray:
    x = _unit_rows(embeddings, tol=ASSIGN_NORM_TOL)
    return _assign(x, model.centroids)[0]

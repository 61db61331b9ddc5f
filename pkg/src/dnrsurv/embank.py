"""Memory bank of unit-norm embeddings and neighbor sets."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, StalledUpdate

UNIT_TOL = 1e-6


def _normalize_rows(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


def softmax_logits(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    w = np.exp(shifted)
    return w / w.sum(axis=-1, keepdims=True)


class MemoryBank:
    """One unit embedding per dataset sample, refreshed by momentum.

    Parameters
    ----------
    vectors : (N, d) array
        Rows are normalized on construction.
    momentum : float in [0, 1)
        Weight of the stored row in :meth:`update`. ``momentum=1`` is
        accepted too and freezes the bank.
    temperature : float in (0, 1]
    include_self : bool
        Whether the sample itself appears in the softmax denominator.
    """

    def __init__(self, vectors, momentum=0.5, temperature=0.5, include_self=True):
        v = np.array(vectors, dtype=float)
        if v.ndim != 2 or v.shape[0] < 2 or v.shape[1] < 2:
            raise InvalidInput("bank needs N >= 2 rows of dimension d >= 2")
        norms = np.linalg.norm(v, axis=1)
        if np.any(norms == 0) or not np.all(np.isfinite(v)):
            raise InvalidInput("bank rows must be finite and non-zero")
        if not 0.0 <= momentum <= 1.0:
            raise InvalidInput("momentum must lie in [0, 1]")
        if not 0.0 < temperature <= 1.0:
            raise InvalidInput("temperature must lie in (0, 1]")
        self.vectors = v / norms[:, None]
        self.momentum = float(momentum)
        self.temperature = float(temperature)
        self.include_self = bool(include_self)

    @classmethod
    def random(cls, n, d, seed=0, **kwargs) -> "MemoryBank":
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((n, d)), **kwargs)

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def logits(self, z) -> np.ndarray:
        """Scaled similarities ``V z / tau`` for a query (or a batch of queries)."""
        return np.asarray(z, dtype=float) @ self.vectors.T / self.temperature

    def similarity_probs(self, i: int) -> np.ndarray:
        """p(j|i) over all N samples, using the stored row of ``i`` as query."""
        if not 0 <= i < self.size:
            raise InvalidInput(f"sample id {i} out of range")
        s = self.logits(self.vectors[i])
        if not self.include_self:
            s = s.copy()
            s[i] = -np.inf
        return softmax_logits(s)

    def update(self, i: int, z_new) -> bool:
        """Momentum refresh of row ``i``. Returns False when the update stalled."""
        z = np.asarray(z_new, dtype=float)
        if abs(np.linalg.norm(z) - 1.0) > UNIT_TOL:
            raise InvalidInput("z_new must be a unit vector")
        mixed = self.momentum * self.vectors[i] + (1.0 - self.momentum) * z
        n = np.linalg.norm(mixed)
        if n < 1e-12:
            warnings.warn(f"zero resultant for row {i}; previous row kept", StalledUpdate, stacklevel=2)
            return False
        self.vectors[i] = mixed / n
        return True

    def update_many(self, ids, z_new) -> int:
        """Update several rows at once; returns the number of stalled rows.

        Ids must be distinct; repeated ids fall back to sequential updates.
        """
        ids = np.asarray(ids, dtype=int)
        z = np.asarray(z_new, dtype=float)
        if np.unique(ids).size != ids.size:
            return sum(not self.update(int(i), v) for i, v in zip(ids, z))
        if np.any(np.abs(np.linalg.norm(z, axis=1) - 1.0) > UNIT_TOL):
            raise InvalidInput("z_new rows must be unit vectors")
        mixed = self.momentum * self.vectors[ids] + (1.0 - self.momentum) * z
        n = np.linalg.norm(mixed, axis=1)
        ok = n >= 1e-12
        self.vectors[ids[ok]] = mixed[ok] / n[ok, None]
        stalled = int((~ok).sum())
        if stalled:
            warnings.warn(f"{stalled} rows had a zero resultant; previous rows kept", StalledUpdate, stacklevel=2)
        return stalled

    def top_k_neighbors(self, i: int, k: int) -> list[int]:
        """The k ids j != i with largest z_j . z_i; ties go to the smaller id."""
        n = self.size
        if not 1 <= k <= n - 1:
            raise InvalidInput(f"k must lie in [1, {n - 1}], got {k}")
        sims = self.vectors @ self.vectors[i]
        ids = np.arange(n)
        mask = ids != i
        # lexsort: last key is primary
        order = np.lexsort((ids[mask], -sims[mask]))
        return [int(j) for j in ids[mask][order[:k]]]

    def all_top_k(self, k: int, block=2048) -> dict[int, list[int]]:
        """top_k_neighbors for every sample, computed blockwise."""
        n = self.size
        if not 1 <= k <= n - 1:
            raise InvalidInput(f"k must lie in [1, {n - 1}], got {k}")
        out = {}
        ids = np.arange(n)
        for start in range(0, n, block):
            rows = ids[start:start + block]
            sims = self.vectors[rows] @ self.vectors.T
            sims[np.arange(len(rows)), rows] = -np.inf
            for r, i in enumerate(rows):
                # candidates: everything at least as similar as the k-th best
                part = np.argpartition(-sims[r], k - 1)[:k]
                kth = sims[r, part].min()
                cand = np.flatnonzero(sims[r] >= kth)
                order = np.lexsort((cand, -sims[r, cand]))
                out[int(i)] = [int(j) for j in cand[order[:k]]]
        return out


@dataclass
class NeighborSets:
    """Spatial overlap sets S_i and feature-space top-k lists N_i."""

    spatial: dict[int, frozenset] = field(default_factory=dict)
    feature: dict[int, list] = field(default_factory=dict)

    def validate(self, k: int | None = None):
        for i, s in self.spatial.items():
            if i in s:
                raise InvalidInput(f"sample {i} is in its own spatial set")
            for j in s:
                if i not in self.spatial.get(j, ()):
                    raise InvalidInput(f"spatial sets not symmetric for ({i}, {j})")
        for i, nb in self.feature.items():
            if i in nb:
                raise InvalidInput(f"sample {i} is in its own feature neighbors")
            if k is not None and len(nb) != k:
                raise InvalidInput(f"sample {i} has {len(nb)} feature neighbors, expected {k}")

    def positives(self, i: int, expanded=False) -> frozenset:
        s = self.spatial.get(i, frozenset())
        if expanded:
            s = s | frozenset(self.feature.get(i, ()))
        return s


GRID_OFFSETS = {
    4: ((-1, 0), (1, 0), (0, -1), (0, 1)),
    8: ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)),
}


def grid_neighbors(slide_ids, rows, cols, connectivity=8) -> dict[int, frozenset]:
    """Spatial sets from tile grid positions: tiles adjacent on the same slide.

    Sample ids are positional indices into the given arrays.
    """
    if connectivity not in GRID_OFFSETS:
        raise InvalidInput("connectivity must be 4 or 8")
    index = {}
    for i, key in enumerate(zip(slide_ids, rows, cols)):
        if key in index:
            raise InvalidInput(f"duplicate tile position {key}")
        index[key] = i
    out = {}
    for (sl, r, c), i in index.items():
        nb = []
        for dr, dc in GRID_OFFSETS[connectivity]:
            j = index.get((sl, r + dr, c + dc))
            if j is not None:
                nb.append(j)
        out[i] = frozenset(nb)
    return out

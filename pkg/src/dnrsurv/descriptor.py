"""Patient descriptors: cluster frequencies plus neighbor transition probabilities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embank import GRID_OFFSETS
from .errors import InvalidInput


@dataclass
class SlideGrid:
    slide_id: str
    entries: dict = field(default_factory=dict)  # (row, col) -> (patch_id, cluster)

    def add(self, row, col, patch_id, cluster):
        key = (int(row), int(col))
        if key in self.entries:
            raise InvalidInput(f"slide {self.slide_id}: two patches at {key}")
        self.entries[key] = (patch_id, int(cluster))

    @property
    def shape(self):
        if not self.entries:
            return (0, 0)
        rows, cols = zip(*self.entries)
        return (max(rows) + 1, max(cols) + 1)

    @classmethod
    def from_labels(cls, slide_id, labels, patch_ids=None):
        """Grid from a dense 2-D label array; negative labels mark empty cells."""
        labels = np.asarray(labels)
        g = cls(slide_id)
        for (r, c), lab in np.ndenumerate(labels):
            if lab >= 0:
                pid = patch_ids[r, c] if patch_ids is not None else f"{slide_id}_{r}_{c}"
                g.add(r, c, pid, lab)
        return g


@dataclass
class PatientDescriptor:
    patient_id: str
    h_c: np.ndarray  # (K,)
    h_t: np.ndarray  # (K, K); row j is p(s = . | neighbor in cluster j)
    k: int

    @property
    def empty_rows(self) -> np.ndarray:
        """Conditioning clusters never observed as a neighbor."""
        return self.h_t.sum(axis=1) == 0


def feature_names(k: int) -> list[str]:
    return [f"hC_{i}" for i in range(k)] + [f"hT_{j}_{i}" for j in range(k) for i in range(k)]


def count_pairs(grids, k, neighborhood=4):
    """Cluster counts and ordered neighbor-pair counts pooled over ``grids``."""
    if neighborhood not in (4, 8):
        raise InvalidInput("neighborhood must be 4 or 8")
    offsets = GRID_OFFSETS[neighborhood]
    cluster_counts = np.zeros(k, dtype=np.int64)
    pair_counts = np.zeros((k, k), dtype=np.int64)
    for g in grids:
        for (r, c), (_, lab) in g.entries.items():
            if not 0 <= lab < k:
                raise InvalidInput(f"slide {g.slide_id}: cluster {lab} outside [0, {k})")
            cluster_counts[lab] += 1
            for dr, dc in offsets:
                nb = g.entries.get((r + dr, c + dc))
                if nb is not None:
                    # neighbor cluster conditions, this patch's cluster is the outcome
                    pair_counts[nb[1], lab] += 1
    return cluster_counts, pair_counts


def build(patient_id, grids, k, neighborhood=4) -> PatientDescriptor:
    """Descriptor of one patient from all of their slide grids.

    Every adjacency is counted in both directions, so the pair-count matrix
    is symmetric; rows are then normalized into conditional probabilities.
    Rows with no observed pairs stay zero.
    """
    grids = list(grids)
    cc, pc = count_pairs(grids, k, neighborhood)
    total = cc.sum()
    if total == 0:
        raise InvalidInput(f"patient {patient_id} has no patches")
    h_c = cc / total
    row_tot = pc.sum(axis=1, keepdims=True)
    h_t = np.divide(pc, row_tot, out=np.zeros((k, k)), where=row_tot > 0)
    return PatientDescriptor(str(patient_id), h_c, h_t, k)


def flatten(d: PatientDescriptor) -> np.ndarray:
    return np.concatenate([d.h_c, d.h_t.ravel()])


def unflatten(vec, k, patient_id="") -> PatientDescriptor:
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (k + k * k,):
        raise InvalidInput(f"expected length {k + k * k}, got {vec.shape}")
    return PatientDescriptor(str(patient_id), vec[:k].copy(), vec[k:].reshape(k, k).copy(), k)


def build_all(patch_patient, patch_slide, rows, cols, clusters, k, neighborhood=4):
    """Descriptors for every patient in a flat patch table.

    Returns ``(patient_ids, matrix)`` with patients in order of first appearance.
    """
    grids: dict = {}
    order = []
    for pid, sid, r, c, lab in zip(patch_patient, patch_slide, rows, cols, clusters):
        if pid not in grids:
            grids[pid] = {}
            order.append(pid)
        slide = grids[pid].setdefault(sid, SlideGrid(str(sid)))
        slide.add(r, c, f"{sid}:{r}:{c}", lab)
    mat = np.vstack([flatten(build(p, grids[p].values(), k, neighborhood)) for p in order])
    return order, mat

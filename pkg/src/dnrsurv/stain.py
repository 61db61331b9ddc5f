"""Optical-density transform and Macenko stain separation.

RGB tiles are mapped to a two-channel hematoxylin/eosin concentration image.
Stain mixing is linear in optical density (Beer-Lambert), so the pipeline is

    rgb -> od = -log10((I + 1) / (I0 + 1))
        -> stain matrix M = [h, e] from the extreme angles of the OD cloud
        -> c = argmin_{c >= 0} ||M c - od||

Pixel arrays are numpy arrays of shape ``(H, W, 3)``; intensities may be
``uint8`` or float.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTissue, InvalidInput

DEFAULT_OD_THRESHOLD = 0.15
DEFAULT_ANGLE_PERCENTILE = 1.0


@dataclass(frozen=True)
class StainMatrix:
    h_vector: np.ndarray
    e_vector: np.ndarray

    def __post_init__(self):
        for name in ("h_vector", "e_vector"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,):
                raise InvalidInput(f"{name} must be a 3-vector")
            if abs(np.linalg.norm(v) - 1.0) > 1e-6:
                raise InvalidInput(f"{name} must have unit norm")
            if np.any(v < 0):
                raise InvalidInput(f"{name} must be non-negative")
            object.__setattr__(self, name, v)
        if np.allclose(self.h_vector, self.e_vector, atol=1e-12):
            raise InvalidInput("h_vector and e_vector coincide")

    @property
    def matrix(self) -> np.ndarray:
        """3x2 matrix with columns (h, e)."""
        return np.column_stack([self.h_vector, self.e_vector])


@dataclass(frozen=True)
class HePatch:
    width: int
    height: int
    channels: np.ndarray  # (height, width, 2) concentrations, h then e

    @property
    def hematoxylin(self):
        return self.channels[..., 0]

    @property
    def eosin(self):
        return self.channels[..., 1]


def rgb_to_od(patch, background_intensity=255.0) -> np.ndarray:
    """Per-pixel optical density, same leading shape as ``patch``.

    Values above the background clip to zero OD.
    """
    arr = np.asarray(patch, dtype=float)
    if arr.size == 0 or arr.shape[-1] != 3:
        raise InvalidInput("patch must be a non-empty array with 3 trailing channels")
    if background_intensity <= 0:
        raise InvalidInput("background_intensity must be positive")
    if np.any(arr < 0):
        raise InvalidInput("intensities must be non-negative")
    od = -np.log10((arr + 1.0) / (background_intensity + 1.0))
    return np.maximum(od, 0.0)


def od_to_rgb(od, background_intensity=255.0) -> np.ndarray:
    """Inverse of :func:`rgb_to_od` (float intensities, no clipping)."""
    od = np.asarray(od, dtype=float)
    return (background_intensity + 1.0) * np.power(10.0, -od) - 1.0


def render_rgb(concentrations, stains: StainMatrix, background_intensity=255.0, quantize=False):
    """Synthesize an RGB patch from stain concentrations of shape ``(..., 2)``."""
    c = np.asarray(concentrations, dtype=float)
    if np.any(c < 0):
        raise InvalidInput("concentrations must be non-negative")
    od = c @ stains.matrix.T
    rgb = od_to_rgb(od, background_intensity)
    if quantize:
        return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    return rgb


def estimate_stain_matrix(od, od_threshold=DEFAULT_OD_THRESHOLD,
                          angle_percentile=DEFAULT_ANGLE_PERCENTILE,
                          rank_tol=1e-6) -> StainMatrix:
    """Macenko estimate of the hematoxylin and eosin OD directions.

    Foreground pixels (OD norm above ``od_threshold``) are projected on the
    plane of the two leading principal axes of their covariance. The stain
    directions are the rays at the ``angle_percentile`` and
    ``100 - angle_percentile`` percentiles of the in-plane angle. The ray with
    the larger red-channel component is reported as hematoxylin.
    """
    if not 0 < angle_percentile < 50:
        raise InvalidInput("angle_percentile must lie in (0, 50)")
    pts = np.asarray(od, dtype=float).reshape(-1, 3)
    fg = pts[np.linalg.norm(pts, axis=1) > od_threshold]
    if fg.shape[0] < 2:
        raise DegenerateTissue(f"only {fg.shape[0]} foreground pixels above OD {od_threshold}")

    evals, evecs = np.linalg.eigh(np.cov(fg, rowvar=False))
    # eigh sorts ascending; the top two span the stain plane
    if evals[-1] <= 0 or evals[-2] <= rank_tol * evals[-1]:
        raise DegenerateTissue("OD covariance is rank deficient (single stain?)")
    plane = evecs[:, [-1, -2]]

    # Angles are measured from the mean OD direction inside the plane. All
    # points lie in the positive cone, so no angle wraps around +-pi.
    mean_dir = plane @ (plane.T @ fg.mean(axis=0))
    u1 = mean_dir / np.linalg.norm(mean_dir)
    u2 = plane @ (plane.T @ np.cross(np.cross(plane[:, 0], plane[:, 1]), u1))
    u2 /= np.linalg.norm(u2)
    phi = np.arctan2(fg @ u2, fg @ u1)
    lo, hi = np.percentile(phi, [angle_percentile, 100.0 - angle_percentile])
    if hi - lo <= 0:
        raise DegenerateTissue("stain directions are not separated")

    def ray(angle):
        v = np.cos(angle) * u1 + np.sin(angle) * u2
        v = np.clip(v, 0.0, None)
        n = np.linalg.norm(v)
        if n == 0:
            raise DegenerateTissue("stain direction outside the positive orthant")
        return v / n

    v_lo, v_hi = ray(lo), ray(hi)
    if v_lo[0] >= v_hi[0]:
        return StainMatrix(v_lo, v_hi)
    return StainMatrix(v_hi, v_lo)


def _nnls2(od: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Vectorized two-variable non-negative least squares, rows of ``od``."""
    h, e = m[:, 0], m[:, 1]
    hh, ee, he = h @ h, e @ e, h @ e
    bh, be = od @ h, od @ e
    det = hh * ee - he * he
    ch = (ee * bh - he * be) / det
    ce = (hh * be - he * bh) / det
    out = np.column_stack([ch, ce])

    bad = (ch < 0) | (ce < 0)
    if np.any(bad):
        # the optimum lies on a face: one coordinate zero, the other clamped 1-D LS
        only_h = np.maximum(bh[bad] / hh, 0.0)
        only_e = np.maximum(be[bad] / ee, 0.0)
        r_h = np.sum((od[bad] - only_h[:, None] * h) ** 2, axis=1)
        r_e = np.sum((od[bad] - only_e[:, None] * e) ** 2, axis=1)
        use_h = r_h <= r_e
        out[bad] = np.column_stack([np.where(use_h, only_h, 0.0), np.where(use_h, 0.0, only_e)])
    return out


def deconvolve(od, stains: StainMatrix) -> HePatch:
    """Non-negative stain concentrations for every pixel of an OD image."""
    od = np.asarray(od, dtype=float)
    if od.shape[-1] != 3 or od.size == 0:
        raise InvalidInput("od must be a non-empty array with 3 trailing channels")
    if od.ndim == 1:
        od = od[None, None, :]
    elif od.ndim == 2:
        od = od[None, :, :]
    conc = _nnls2(od.reshape(-1, 3), stains.matrix).reshape(od.shape[:-1] + (2,))
    return HePatch(width=conc.shape[1], height=conc.shape[0], channels=conc)


def to_he(patch, background_intensity=255.0, stains: StainMatrix | None = None, **kwargs) -> HePatch:
    """Convenience: RGB patch to HE concentrations, estimating stains if not given."""
    od = rgb_to_od(patch, background_intensity)
    if stains is None:
        stains = estimate_stain_matrix(od, **kwargs)
    return deconvolve(od, stains)


def mean_od(patch, background_intensity=255.0) -> float:
    """Mean OD magnitude; used as a foreground proxy when filtering tiles."""
    od = rgb_to_od(patch, background_intensity)
    return float(np.linalg.norm(od.reshape(-1, 3), axis=1).mean())

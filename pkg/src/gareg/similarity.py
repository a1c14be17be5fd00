"""Fitness measures: median greedy point distance, overlap NCC and control-point RMSE."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import (
    ControlPointMismatchError,
    DegenerateSignalError,
    EmptySetError,
    InsufficientOverlapError,
)
from .features import PointSet
from .imaging import Image, MaskedImage
from .transform import Transform, apply_matrix, compose_matrix

GRID_THRESHOLD = 500
DEFAULT_MIN_OVERLAP = 0.25


@dataclass(frozen=True)
class FitnessVector:
    median_dist: float = math.inf
    ncc: float = math.nan
    valid: bool = False

    @classmethod
    def invalid(cls) -> "FitnessVector":
        return cls(math.inf, math.nan, False)


@dataclass(frozen=True)
class Match:
    point: tuple
    matched: tuple | None
    distance: float


def _as_array(pts) -> np.ndarray:
    if isinstance(pts, PointSet):
        return pts.points
    return np.asarray(pts, dtype=np.float64).reshape(-1, 2)


def _grid_cell(q: np.ndarray) -> float:
    ext = np.ptp(q, axis=0)
    area = max(float(ext[0]) * float(ext[1]), 1.0)
    return max(math.sqrt(area / len(q)) * 2.0, 1e-6)


def match_indices(p: np.ndarray, q: np.ndarray):
    """Greedy in-order matching; flat scan for small Q, grid index above."""
    p = np.ascontiguousarray(p, dtype=np.float64)
    q = np.ascontiguousarray(q, dtype=np.float64)
    if len(q) >= GRID_THRESHOLD:
        return _kernels.grid_greedy_match(p, q, _grid_cell(q))
    return _kernels.greedy_match(p, q)


def correspondences(p_warped, q) -> list[Match]:
    """Match each warped point, in order, to its nearest not-yet-assigned ``q``.

    Once ``q`` runs out, the remaining points come back with ``matched=None``
    and ``distance=nan``.
    """
    p = _as_array(p_warped)
    qa = _as_array(q)
    if len(p) == 0 or len(qa) == 0:
        raise EmptySetError("correspondences need two non-empty point sets")
    idx, dist = match_indices(p, qa)
    out = []
    for i, (j, d) in enumerate(zip(idx, dist)):
        if j < 0:
            out.append(Match(tuple(p[i]), None, math.nan))
        else:
            out.append(Match(tuple(p[i]), tuple(qa[j]), float(d)))
    return out


def median(values) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise EmptySetError("median of an empty list")
    k = v.size
    if k % 2:
        return float(v[k // 2])
    return float(0.5 * (v[k // 2 - 1] + v[k // 2]))


def median_distance(p: PointSet, q: PointSet, t: Transform, center=(0.0, 0.0)) -> float:
    """Median correspondence distance after mapping ``p`` through ``t``."""
    pa, qa = _as_array(p), _as_array(q)
    if len(pa) == 0 or len(qa) == 0:
        raise EmptySetError("median_distance needs two non-empty point sets")
    if len(pa) < 3 or len(qa) < 3:
        raise ValueError("median_distance needs at least 3 points in each set")
    warped = apply_matrix(compose_matrix(t, center), pa)
    _, dist = match_indices(warped, qa)
    return median(dist[~np.isnan(dist)])


def batch_median_distance(genes: np.ndarray, p: np.ndarray, q: np.ndarray, center) -> np.ndarray:
    """:func:`median_distance` for every row of an (n, 6) gene array."""
    from .transform import matrices_from_genes

    mats = matrices_from_genes(genes, center)
    if len(q) >= GRID_THRESHOLD:
        out = np.empty(len(mats))
        for i, m in enumerate(mats):
            _, d = match_indices(apply_matrix(m, p), q)
            out[i] = median(d[~np.isnan(d)])
        return out
    return _kernels.batch_median_distance(mats, np.ascontiguousarray(p), np.ascontiguousarray(q))


def ncc(reference: Image, warped: MaskedImage, min_overlap_frac: float = DEFAULT_MIN_OVERLAP) -> float:
    """Normalized cross correlation restricted to the mask-true overlap."""
    if reference.shape != warped.image.shape:
        raise ValueError(f"dimension mismatch {reference.shape} vs {warped.image.shape}")
    frac = warped.overlap_fraction
    if frac < min_overlap_frac:
        raise InsufficientOverlapError(f"overlap {frac:.3f} below {min_overlap_frac:.3f}")
    value, _, saa, sbb = _kernels.masked_ncc(reference.data, warped.image.data, warped.mask)
    if not (saa > 0 and sbb > 0):
        raise DegenerateSignalError("zero intensity variance over the overlap")
    return float(value)


def rmse(ref_pts: PointSet, sensed_pts: PointSet, t: Transform, center=(0.0, 0.0)) -> float:
    """Root mean square residual of ``t(sensed_i) - ref_i`` over control pairs."""
    r, s = _as_array(ref_pts), _as_array(sensed_pts)
    if len(r) != len(s) or len(r) == 0:
        raise ControlPointMismatchError(f"{len(r)} reference vs {len(s)} sensed control points")
    res = apply_matrix(compose_matrix(t, center), s) - r
    return float(math.sqrt(np.mean(np.sum(res * res, axis=1))))

"""Feature point sets: CSV ingestion and an automatic corner detector.

The automatic detector is a structure-tensor (Harris) corner detector with
greedy non-maximum suppression and sub-pixel quadratic peak refinement. It
stands in for a wavelet-based extractor; the registration code only ever
sees the resulting :class:`PointSet`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import (
    EmptyPointFileError,
    InsufficientFeaturesError,
    MalformedRowError,
    MissingFileError,
    NonNumericFieldError,
)

MANUAL = "manual"
AUTOMATIC = "automatic"


@dataclass(frozen=True, eq=False)
class PointSet:
    points: np.ndarray
    source: str = MANUAL

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        if self.source not in (MANUAL, AUTOMATIC):
            raise ValueError(f"unknown point source {self.source!r}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(map(tuple, self.points))

    def __eq__(self, other):
        return isinstance(other, PointSet) and np.array_equal(self.points, other.points)


def load_points(path) -> PointSet:
    """Parse a UTF-8 ``x,y`` CSV file (no header; ``#`` comment lines skipped)."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"{path}: no such file")
    pts = []
    text = path.read_text(encoding="utf-8-sig")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = [f.strip() for f in stripped.split(",")]
        if len(fields) != 2:
            raise MalformedRowError(lineno, line)
        try:
            x, y = float(fields[0]), float(fields[1])
        except ValueError:
            raise NonNumericFieldError(lineno, line) from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise NonNumericFieldError(lineno, line)
        pts.append((x, y))
    if not pts:
        raise EmptyPointFileError(f"{path}: no points")
    return PointSet(np.array(pts), MANUAL)


def save_points(ps: PointSet, path) -> Path:
    path = Path(path)
    path.write_text("".join(f"{x:.9g},{y:.9g}\n" for x, y in ps.points), encoding="utf-8")
    return path


def corner_response(data: np.ndarray, sigma: float = 1.0, k: float = 0.04) -> np.ndarray:
    """Harris response ``det(S) - k tr(S)^2`` of the Gaussian structure tensor.

    Gradients are taken on the image smoothed at ``sigma``; the tensor is
    integrated at ``2 * sigma``.
    """
    smooth = ndimage.gaussian_filter(data, sigma, mode="nearest")
    gy, gx = np.gradient(smooth)
    win = 2.0 * sigma
    sxx = ndimage.gaussian_filter(gx * gx, win, mode="nearest")
    syy = ndimage.gaussian_filter(gy * gy, win, mode="nearest")
    sxy = ndimage.gaussian_filter(gx * gy, win, mode="nearest")
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def _subpixel(resp: np.ndarray, r: np.ndarray, c: np.ndarray):
    # separable parabola through the 3-neighbourhood along each axis
    def offset(m, c0, p):
        den = m - 2.0 * c0 + p
        with np.errstate(divide="ignore", invalid="ignore"):
            off = np.where(den < 0, 0.5 * (m - p) / den, 0.0)
        return np.clip(off, -0.5, 0.5)

    center = resp[r, c]
    dx = offset(resp[r, c - 1], center, resp[r, c + 1])
    dy = offset(resp[r - 1, c], center, resp[r + 1, c])
    return c + dx, r + dy


def detect_corners(img, max_points: int = 200, min_separation: float = 8.0,
                   sigma: float = 1.0, k: float = 0.04, rel_threshold: float = 0.01,
                   border: int | None = None, mask=None) -> PointSet:
    """Return up to ``max_points`` corners by descending response.

    Candidates are strict 3x3 maxima of the Harris response above
    ``rel_threshold * max(response)``, refined to sub-pixel precision and then
    accepted greedily while every pair stays ``min_separation`` apart.
    ``mask`` (true = real data) suppresses responses within ``border`` pixels
    of missing data, e.g. the zero fill outside a warped image.
    """
    data = img.data if hasattr(img, "data") else np.asarray(img, dtype=np.float64)
    h, w = data.shape
    if h < 8 or w < 8:
        raise ValueError("corner detection needs an image of at least 8x8")
    if max_points < 4:
        raise ValueError("max_points must be at least 4")
    resp = corner_response(data, sigma, k)
    peak = resp.max()
    if not peak > 0:
        raise InsufficientFeaturesError("no corner response anywhere in the image")
    if border is None:
        border = max(2, int(math.ceil(3 * sigma)))
    footprint = np.ones((3, 3), dtype=bool)
    local_max = resp == ndimage.maximum_filter(resp, footprint=footprint, mode="nearest")
    local_max &= resp > rel_threshold * peak
    local_max[:border, :] = False
    local_max[-border:, :] = False
    local_max[:, :border] = False
    local_max[:, -border:] = False
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != data.shape:
            raise ValueError("mask and image dimensions differ")
        local_max &= ndimage.binary_erosion(mask, np.ones((2 * border + 1,) * 2, dtype=bool),
                                            border_value=1)
    r, c = np.nonzero(local_max)
    vals = resp[r, c]
    # stable descending sort: equal responses keep row-major order
    order = np.argsort(-vals, kind="stable")
    r, c, vals = r[order], c[order], vals[order]
    xs, ys = _subpixel(resp, r, c)

    chosen = []
    min_d2 = float(min_separation) ** 2
    for x, y in zip(xs, ys):
        if len(chosen) >= max_points:
            break
        if chosen:
            arr = np.asarray(chosen)
            d2 = (arr[:, 0] - x) ** 2 + (arr[:, 1] - y) ** 2
            if d2.min() < min_d2:
                continue
        chosen.append((x, y))
    if len(chosen) < 4:
        raise InsufficientFeaturesError(f"only {len(chosen)} corners found; need at least 4")
    return PointSet(np.array(chosen), AUTOMATIC)

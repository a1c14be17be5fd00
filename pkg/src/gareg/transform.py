"""Six-parameter affine model: translation, rotation, uniform scale, two shears.

Conventions
-----------
Points are ``(x, y)`` pixel coordinates with ``y`` pointing down (image rows).
The linear part is ``R(theta) @ Shear(shear_x, shear_y) @ (scale * I)`` with::

    R     = [[cos, -sin], [sin, cos]]
    Shear = [[1, shear_x], [shear_y, 1]]

and the full map is ``p -> L (p - c) + c + (tx, ty)`` for a pivot ``c``
(the sensed image centre in the registration pipeline). ``R`` is
counter-clockwise in mathematical axes, which shows up as clockwise on screen
because of the y-down image convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import SingularTransformError

GENE_NAMES = ("tx", "ty", "theta", "scale", "shear_x", "shear_y")
SINGULAR_EPS = 1e-12


@dataclass(frozen=True)
class Transform:
    tx: float = 0.0
    ty: float = 0.0
    theta: float = 0.0
    scale: float = 1.0
    shear_x: float = 0.0
    shear_y: float = 0.0

    @classmethod
    def identity(cls) -> "Transform":
        return cls()

    @classmethod
    def from_array(cls, genes) -> "Transform":
        return cls(*(float(g) for g in genes))

    def to_array(self) -> np.ndarray:
        return np.array((self.tx, self.ty, self.theta, self.scale, self.shear_x, self.shear_y))

    def to_dict(self) -> dict:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "Transform":
        missing = [k for k in GENE_NAMES if k not in d]
        if missing:
            raise ValueError(f"transform is missing keys {missing}")
        return cls(**{k: float(d[k]) for k in GENE_NAMES})

    def determinant(self) -> float:
        return self.scale**2 * (1.0 - self.shear_x * self.shear_y)


@dataclass(frozen=True)
class Bounds:
    """Closed per-gene search intervals, ordered as :data:`GENE_NAMES`."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 6 or len(hi) != 6:
            raise ValueError("bounds need exactly six genes")
        for name, a, b in zip(GENE_NAMES, lo, hi):
            if not (math.isfinite(a) and math.isfinite(b)) or a > b:
                raise ValueError(f"invalid interval for {name}: [{a}, {b}]")
        if lo[3] <= 0:
            raise ValueError("scale interval must be strictly positive")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def default(cls, width: int, height: int) -> "Bounds":
        q = math.pi / 4
        return cls(
            lo=(-0.25 * width, -0.25 * height, -q, 0.7, -0.2, -0.2),
            hi=(0.25 * width, 0.25 * height, q, 1.4, 0.2, 0.2),
        )

    @property
    def lo_array(self) -> np.ndarray:
        return np.array(self.lo)

    @property
    def hi_array(self) -> np.ndarray:
        return np.array(self.hi)

    @property
    def span(self) -> np.ndarray:
        return self.hi_array - self.lo_array

    def contains(self, t: Transform, tol: float = 0.0) -> bool:
        g = t.to_array()
        return bool(np.all(g >= self.lo_array - tol) and np.all(g <= self.hi_array + tol))

    def clamp(self, genes: np.ndarray) -> np.ndarray:
        return np.clip(genes, self.lo_array, self.hi_array)

    def with_override(self, gene: str, lo: float, hi: float) -> "Bounds":
        i = GENE_NAMES.index(gene)
        new_lo, new_hi = list(self.lo), list(self.hi)
        new_lo[i], new_hi[i] = lo, hi
        return Bounds(tuple(new_lo), tuple(new_hi))

    def to_dict(self) -> dict:
        return {n: [a, b] for n, a, b in zip(GENE_NAMES, self.lo, self.hi)}

    @classmethod
    def from_dict(cls, d: dict) -> "Bounds":
        return cls(tuple(d[n][0] for n in GENE_NAMES), tuple(d[n][1] for n in GENE_NAMES))


def linear_part(t: Transform) -> np.ndarray:
    c, s = math.cos(t.theta), math.sin(t.theta)
    rot = np.array([[c, -s], [s, c]])
    shear = np.array([[1.0, t.shear_x], [t.shear_y, 1.0]])
    return rot @ shear * t.scale


def compose_matrix(t: Transform, center=(0.0, 0.0)) -> np.ndarray:
    """Return the 2x3 matrix ``M`` with ``M @ [x, y, 1]`` the mapped point."""
    lin = linear_part(t)
    if abs(np.linalg.det(lin)) < SINGULAR_EPS or t.scale <= 0:
        raise SingularTransformError(f"linear part of {t} is singular")
    c = np.asarray(center, dtype=np.float64)
    offset = c - lin @ c + np.array([t.tx, t.ty])
    return np.column_stack([lin, offset])


def invert_matrix(m: np.ndarray) -> np.ndarray:
    lin = m[:, :2]
    det = lin[0, 0] * lin[1, 1] - lin[0, 1] * lin[1, 0]
    if abs(det) < SINGULAR_EPS:
        raise SingularTransformError(f"determinant {det:g} is below {SINGULAR_EPS:g}")
    inv = np.array([[lin[1, 1], -lin[0, 1]], [-lin[1, 0], lin[0, 0]]]) / det
    return np.column_stack([inv, -inv @ m[:, 2]])


def invert(t: Transform, center=(0.0, 0.0)) -> np.ndarray:
    """2x3 matrix of the inverse mapping of ``t`` about ``center``."""
    return invert_matrix(compose_matrix(t, center))


def apply_matrix(m: np.ndarray, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    return pts @ m[:, :2].T + m[:, 2]


def apply(t: Transform, pts, center=(0.0, 0.0)):
    """Map points through ``t``; accepts a PointSet or an (n, 2) array."""
    from .features import PointSet

    m = compose_matrix(t, center)
    if isinstance(pts, PointSet):
        return PointSet(apply_matrix(m, pts.points), pts.source)
    return apply_matrix(m, pts)


def matrices_from_genes(genes: np.ndarray, center) -> np.ndarray:
    """Vectorised :func:`compose_matrix` for an (n, 6) gene array -> (n, 2, 3)."""
    genes = np.atleast_2d(genes)
    tx, ty, th, s, hx, hy = genes.T
    c, sn = np.cos(th), np.sin(th)
    a = s * (c - sn * hy)
    b = s * (c * hx - sn)
    d = s * (sn + c * hy)
    e = s * (sn * hx + c)
    cx, cy = float(center[0]), float(center[1])
    out = np.empty((len(genes), 2, 3))
    out[:, 0, 0], out[:, 0, 1] = a, b
    out[:, 1, 0], out[:, 1, 1] = d, e
    out[:, 0, 2] = cx - a * cx - b * cy + tx
    out[:, 1, 2] = cy - d * cx - e * cy + ty
    return out

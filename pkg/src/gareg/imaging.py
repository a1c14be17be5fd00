"""Grayscale images: file I/O, bilinear sampling and inverse-mapped affine warps."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels
from .errors import (
    CorruptHeaderError,
    ImageFileError,
    MissingFileError,
    UnsupportedFormatError,
)
from .transform import Transform, compose_matrix, invert_matrix

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True, eq=False)
class Image:
    """Row-major grid of real intensities, nominal range [0, 255].

    ``data`` has shape ``(height, width)``.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image data must be a non-empty 2D grid, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image intensities must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_flat(cls, width: int, height: int, values) -> "Image":
        values = np.asarray(values, dtype=np.float64)
        if values.size != width * height:
            raise ValueError(f"expected {width * height} values, got {values.size}")
        return cls(values.reshape(height, width))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape

    @property
    def center(self):
        return ((self.width - 1) / 2.0, (self.height - 1) / 2.0)

    def __eq__(self, other):
        return isinstance(other, Image) and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class MaskedImage:
    """An image plus the boolean grid of pixels backed by in-bounds source data."""

    image: Image
    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != self.image.shape:
            raise ValueError("mask and image dimensions differ")
        object.__setattr__(self, "mask", mask)

    @property
    def overlap_fraction(self) -> float:
        return float(self.mask.mean())


# ---------------------------------------------------------------------------
# file I/O


def _read_pgm(raw: bytes) -> np.ndarray:
    # header: magic, width, height, maxval separated by whitespace / comments
    tokens = []
    pos = 2
    n = len(raw)
    while len(tokens) < 3:
        while pos < n and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < n and raw[pos : pos + 1] == b"#":
            while pos < n and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not raw[pos : pos + 1].isspace() and raw[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise CorruptHeaderError("truncated PGM header")
        tok = raw[start:pos]
        if not tok.isdigit():
            raise CorruptHeaderError(f"non-numeric PGM header field {tok!r}")
        tokens.append(int(tok))
    if pos >= n or not raw[pos : pos + 1].isspace():
        raise CorruptHeaderError("missing whitespace after PGM header")
    pos += 1
    width, height, maxval = tokens
    if width < 1 or height < 1 or not (1 <= maxval <= 65535):
        raise CorruptHeaderError(f"bad PGM dimensions/maxval {tokens}")
    if maxval < 256:
        need = width * height
        if n - pos < need:
            raise CorruptHeaderError(f"PGM pixel data truncated: {n - pos} of {need} bytes")
        arr = np.frombuffer(raw, dtype=np.uint8, count=need, offset=pos).astype(np.float64)
    else:
        need = 2 * width * height
        if n - pos < need:
            raise CorruptHeaderError(f"PGM pixel data truncated: {n - pos} of {need} bytes")
        arr = np.frombuffer(raw, dtype=">u2", count=width * height, offset=pos).astype(np.float64)
        arr *= 255.0 / maxval
    return arr.reshape(height, width)


def to_gray(rgb: np.ndarray) -> np.ndarray:
    """Luma conversion with weights 0.299 / 0.587 / 0.114 (alpha ignored)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    w = np.array(LUMA_WEIGHTS)
    return rgb[..., 0] * w[0] + rgb[..., 1] * w[1] + rgb[..., 2] * w[2]


def _read_png(path: Path) -> np.ndarray:
    from PIL import Image as PILImage, UnidentifiedImageError

    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("L", "I", "I;16", "I;16B", "F"):
                arr = np.asarray(im, dtype=np.float64)
                if mode.startswith("I") and arr.max(initial=0) > 255:
                    arr = arr * (255.0 / 65535.0)
                return arr
            if mode == "LA":
                return np.asarray(im, dtype=np.float64)[..., 0]
            if mode == "1":
                return np.asarray(im.convert("L"), dtype=np.float64)
            return to_gray(np.asarray(im.convert("RGB"), dtype=np.float64))
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise CorruptHeaderError(f"{path}: unreadable PNG ({exc})") from exc


def load_image(path) -> Image:
    """Read a binary PGM (P5) or PNG file; colour PNGs are converted to luma."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"{path}: no such file")
    raw = path.read_bytes()
    if len(raw) < 2:
        raise CorruptHeaderError(f"{path}: empty or truncated header")
    if raw[:2] == b"P5":
        try:
            return Image(_read_pgm(raw))
        except CorruptHeaderError as exc:
            raise CorruptHeaderError(f"{path}: {exc}") from exc
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        return Image(_read_png(path))
    if raw[:1] == b"P" and raw[1:2].isdigit():
        raise UnsupportedFormatError(f"{path}: netpbm variant {raw[:2].decode()} is not supported (use P5)")
    if raw.startswith(b"\x89PN"):
        raise CorruptHeaderError(f"{path}: truncated PNG signature")
    raise UnsupportedFormatError(f"{path}: unrecognised image format")


def _to_uint8(img: Image) -> np.ndarray:
    return np.clip(np.rint(img.data), 0, 255).astype(np.uint8)


def encode_pgm(img: Image) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + _to_uint8(img).tobytes()


def save_image(img: Image, path) -> Path:
    """Write ``img`` rounded to 8 bits; format follows the suffix (.pgm or .png)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(encode_pgm(img))
        os.replace(tmp, path)
    elif suffix == ".png":
        from PIL import Image as PILImage

        PILImage.fromarray(_to_uint8(img), mode="L").save(path)
    else:
        raise UnsupportedFormatError(f"cannot write {suffix!r} images; use .pgm or .png")
    return path


# ---------------------------------------------------------------------------
# sampling and warping


def sample_bilinear(img: Image, x: float, y: float) -> Optional[float]:
    v = _kernels.bilinear(img.data, float(x), float(y))
    return None if np.isnan(v) else float(v)


def warp_matrix(src, src_from_dst: np.ndarray, out_width: int, out_height: int) -> MaskedImage:
    """Sample ``src`` at ``src_from_dst @ (x, y, 1)`` for every output pixel.

    ``src`` may be a MaskedImage; samples that touch a mask-false pixel are
    then reported as missing.
    """
    if out_width < 1 or out_height < 1:
        raise ValueError("output dimensions must be positive")
    if isinstance(src, MaskedImage):
        data, cells, use = src.image.data, _kernels.cell_valid(src.mask), True
    else:
        data, cells, use = src.data, np.zeros((1, 1), dtype=bool), False
    out = np.empty((out_height, out_width))
    mask = np.empty((out_height, out_width), dtype=bool)
    _kernels.warp_into(data, np.ascontiguousarray(src_from_dst, dtype=np.float64), out, mask, cells, use)
    return MaskedImage(Image(out), mask)


def warp_image(sensed, t: Transform, out_width: int, out_height: int, center=None) -> MaskedImage:
    """Resample ``sensed`` into the output frame of ``t`` by inverse mapping.

    ``t`` maps sensed coordinates to output coordinates about ``center``
    (default: the sensed image centre). ``sensed`` is an Image or a
    MaskedImage whose false pixels hold no data. Raises SingularTransformError
    when ``t`` has no inverse.
    """
    if center is None:
        center = (sensed.image if isinstance(sensed, MaskedImage) else sensed).center
    inv = invert_matrix(compose_matrix(t, center))
    return warp_matrix(sensed, inv, out_width, out_height)


def checkerboard_overlay(a: Image, b: Image, tile: int = 32) -> Image:
    """Alternate ``tile``-pixel squares from ``a`` and ``b`` (same size)."""
    if a.shape != b.shape:
        raise ValueError("overlay images must have equal dimensions")
    rows, cols = np.indices(a.shape)
    pick_a = ((rows // tile) + (cols // tile)) % 2 == 0
    return Image(np.where(pick_a, a.data, b.data))

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gareg.errors import CorruptHeaderError, MissingFileError, SingularTransformError, UnsupportedFormatError
from gareg.imaging import (
    Image,
    MaskedImage,
    checkerboard_overlay,
    encode_pgm,
    load_image,
    sample_bilinear,
    save_image,
    warp_image,
)
from gareg.transform import Transform, compose_matrix, invert_matrix


def write_pgm(path, w, h, payload: bytes, maxval=255):
    path.write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + payload)
    return path


def test_load_pgm_bytes_map_exactly(tmp_path):
    p = write_pgm(tmp_path / "a.pgm", 2, 2, bytes([0, 255, 128, 64]))
    img = load_image(p)
    assert (img.width, img.height) == (2, 2)
    assert img.data.ravel().tolist() == [0, 255, 128, 64]


def test_load_pgm_with_comment(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n3 1\n255\n" + bytes([1, 2, 3]))
    assert load_image(p).data.tolist() == [[1, 2, 3]]


def test_empty_file_is_corrupt_header(tmp_path):
    p = tmp_path / "empty.pgm"
    p.write_bytes(b"")
    with pytest.raises(CorruptHeaderError):
        load_image(p)


def test_truncated_pixels_is_corrupt(tmp_path):
    p = write_pgm(tmp_path / "t.pgm", 4, 4, bytes(3))
    with pytest.raises(CorruptHeaderError):
        load_image(p)


def test_missing_and_unsupported_are_distinct(tmp_path):
    with pytest.raises(MissingFileError):
        load_image(tmp_path / "nope.pgm")
    p = tmp_path / "x.txt"
    p.write_text("hello world")
    with pytest.raises(UnsupportedFormatError):
        load_image(p)
    ascii_pgm = tmp_path / "a.pgm"
    ascii_pgm.write_text("P2\n1 1\n255\n7\n")
    with pytest.raises(UnsupportedFormatError):
        load_image(ascii_pgm)


def test_color_png_matches_independent_luma_loop(tmp_path, rng):
    from PIL import Image as PILImage

    rgb = rng.integers(0, 256, size=(7, 5, 3), dtype=np.uint8)
    p = tmp_path / "rgb.png"
    PILImage.fromarray(rgb, mode="RGB").save(p)
    img = load_image(p)
    assert (img.height, img.width) == (7, 5)
    for r in range(7):
        for c in range(5):
            R, G, B = (float(v) for v in rgb[r, c])
            assert img.data[r, c] == pytest.approx(0.299 * R + 0.587 * G + 0.114 * B, abs=1e-9)


def test_gray_png_roundtrip(tmp_path, rng):
    data = rng.integers(0, 256, size=(6, 9)).astype(float)
    p = save_image(Image(data), tmp_path / "g.png")
    assert np.array_equal(load_image(p).data, data)


def test_pgm_roundtrip_and_encoding(tmp_path, rng):
    data = rng.integers(0, 256, size=(5, 4)).astype(float)
    img = Image(data)
    p = save_image(img, tmp_path / "r.pgm")
    assert p.read_bytes() == encode_pgm(img)
    assert load_image(p) == img


def test_image_invariants():
    with pytest.raises(ValueError):
        Image(np.array([[1.0, np.nan]]))
    with pytest.raises(ValueError):
        Image.from_flat(2, 2, [1, 2, 3])
    img = Image.from_flat(3, 2, range(6))
    assert img.data.shape == (2, 3)
    with pytest.raises(ValueError):
        MaskedImage(img, np.ones((3, 2), bool))


def test_sample_bilinear_lattice_and_bounds():
    img = Image(np.arange(9, dtype=float).reshape(3, 3))
    assert sample_bilinear(img, 1, 1) == 4.0
    assert sample_bilinear(img, 2, 2) == 8.0
    assert sample_bilinear(img, -0.01, 1) is None
    assert sample_bilinear(img, 1, 2.0001) is None


def test_sample_bilinear_hand_oracle():
    img = Image.from_flat(2, 2, [0, 100, 0, 100])
    # (1-fx)(1-fy)v00 + fx(1-fy)v10 + (1-fx)fy v01 + fx fy v11 at fx = fy = 0.5
    expected = 0.25 * 0 + 0.25 * 100 + 0.25 * 0 + 0.25 * 100
    assert sample_bilinear(img, 0.5, 0.5) == pytest.approx(expected) == pytest.approx(50.0)


@settings(max_examples=60, deadline=None)
@given(x=st.floats(0.05, 14.9), y=st.floats(0.05, 14.9), eps=st.floats(-0.05, 0.05))
def test_sample_bilinear_continuity(gradient16, x, y, eps):
    a = sample_bilinear(gradient16, x, y)
    b = sample_bilinear(gradient16, x + eps, y + eps)
    x0, y0 = int(x), int(y)
    local = gradient16.data[y0:y0 + 3, x0:x0 + 3]
    assert abs(a - b) <= abs(eps) * (local.max() - local.min()) * 2 + 1e-9


def test_identity_warp_is_bit_exact(shapes):
    out = warp_image(shapes, Transform(), shapes.width, shapes.height)
    assert out.mask.all()
    assert np.array_equal(out.image.data, shapes.data)


def test_integer_translation_shifts_columns():
    data = np.arange(12 * 20, dtype=float).reshape(12, 20)
    img = Image(data)
    out = warp_image(img, Transform(tx=3), 20, 12)
    assert not out.mask[:, :3].any()
    assert out.mask[:, 3:].all()
    assert np.array_equal(out.image.data[:, 3:], data[:, :-3])
    assert (out.image.data[:, :3] == 0).all()


@pytest.mark.parametrize("tx,ty", [(3, 0), (-5, 2), (4, -7), (0, 0), (-19, 11)])
def test_masked_count_matches_translation_area(tx, ty):
    w, h = 20, 12
    img = Image(np.ones((h, w)))
    out = warp_image(img, Transform(tx=tx, ty=ty), w, h)
    expected_false = w * h - max(w - abs(tx), 0) * max(h - abs(ty), 0)
    assert int((~out.mask).sum()) == expected_false


@pytest.mark.parametrize("tx,ty", [(3, 0), (-2, 5), (6, -4)])
def test_translation_roundtrip(checker, tx, ty):
    w, h = checker.width, checker.height
    there = warp_image(checker, Transform(tx=tx, ty=ty), w, h)
    back = warp_image(there.image, Transform(tx=-tx, ty=-ty), w, h)
    # pixels whose whole path stayed in bounds
    both = back.mask & warp_image(Image(there.mask.astype(float)), Transform(tx=-tx, ty=-ty), w, h).image.data.astype(bool)
    assert both.sum() > 0.8 * w * h
    assert np.array_equal(back.image.data[both], checker.data[both])


def _scalar_bilinear(data, x, y):
    h, w = len(data), len(data[0])
    if x < 0 or y < 0 or x > w - 1 or y > h - 1:
        return None
    x0 = min(int(math.floor(x)), w - 2)
    y0 = min(int(math.floor(y)), h - 2)
    fx, fy = x - x0, y - y0
    top = data[y0][x0] * (1 - fx) + data[y0][x0 + 1] * fx
    bot = data[y0 + 1][x0] * (1 - fx) + data[y0 + 1][x0 + 1] * fx
    return top * (1 - fy) + bot * fy


def test_rotation_warp_matches_scalar_oracle(gradient16):
    t = Transform(tx=0.7, ty=-1.2, theta=0.3, scale=1.1, shear_x=0.05, shear_y=-0.1)
    c = gradient16.center
    out = warp_image(gradient16, t, 16, 16)
    m = compose_matrix(t, c)
    inv = invert_matrix(m)
    data = gradient16.data.tolist()
    for r in range(16):
        for col in range(16):
            sx = inv[0, 0] * col + inv[0, 1] * r + inv[0, 2]
            sy = inv[1, 0] * col + inv[1, 1] * r + inv[1, 2]
            v = _scalar_bilinear(data, sx, sy)
            if v is None:
                assert not out.mask[r, col]
            else:
                assert out.mask[r, col]
                assert abs(out.image.data[r, col] - v) < 1e-6


def test_warp_rejects_singular_and_bad_dims(gradient16):
    with pytest.raises(SingularTransformError):
        warp_image(gradient16, Transform(shear_x=1.0, shear_y=1.0), 16, 16)
    with pytest.raises(ValueError):
        warp_image(gradient16, Transform(), 0, 16)


def test_checkerboard_overlay_tiles():
    a = Image(np.zeros((64, 64)))
    b = Image(np.full((64, 64), 9.0))
    ov = checkerboard_overlay(a, b, tile=32)
    assert ov.data[0, 0] == 0 and ov.data[0, 40] == 9 and ov.data[40, 0] == 9 and ov.data[40, 40] == 0

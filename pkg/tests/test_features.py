import itertools

import numpy as np
import pytest

from gareg.errors import (
    EmptyPointFileError,
    InsufficientFeaturesError,
    MalformedRowError,
    MissingFileError,
    NonNumericFieldError,
)
from gareg.features import PointSet, detect_corners, load_points, save_points
from gareg.imaging import Image


def test_load_points_basic(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("1.5,2.0\n3,4\n")
    assert load_points(p) == PointSet([(1.5, 2.0), (3, 4)])


def test_load_points_non_numeric_names_line(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("a,b\n3,4\n")
    with pytest.raises(MalformedRowError) as err:
        load_points(p)
    assert err.value.line == 1
    assert isinstance(err.value, NonNumericFieldError)


def test_load_points_wrong_field_count(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("1,2\n3,4,5\n")
    with pytest.raises(MalformedRowError) as err:
        load_points(p)
    assert err.value.line == 2 and not isinstance(err.value, NonNumericFieldError)


def test_load_points_crlf_and_comments(tmp_path):
    lf = tmp_path / "lf.csv"
    lf.write_bytes(b"1.5,2.0\n3,4\n")
    crlf = tmp_path / "crlf.csv"
    crlf.write_bytes(b"# header comment\r\n1.5,2.0\r\n\r\n3,4\r\n")
    assert load_points(lf) == load_points(crlf)


def test_load_points_empty_and_missing(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("# nothing\n\n")
    with pytest.raises(EmptyPointFileError):
        load_points(p)
    with pytest.raises(MissingFileError):
        load_points(tmp_path / "none.csv")


def test_save_load_roundtrip(tmp_path, rng):
    ps = PointSet(rng.uniform(0, 256, size=(12, 2)))
    back = load_points(save_points(ps, tmp_path / "x.csv"))
    assert np.allclose(back.points, ps.points, rtol=1e-8)


def test_pointset_validation():
    with pytest.raises(ValueError):
        PointSet([(0, np.inf)])
    with pytest.raises(ValueError):
        PointSet([(0, 0)], source="other")
    assert list(PointSet([(1, 2), (3, 4)])) == [(1, 2), (3, 4)]


def square_image():
    data = np.zeros((64, 64))
    data[22:42, 22:42] = 255.0
    return Image(data)


def test_constant_image_has_no_corners():
    with pytest.raises(InsufficientFeaturesError):
        detect_corners(Image(np.full((64, 64), 7.0)))


def test_square_corners_match_analytic_positions():
    pts = detect_corners(square_image(), max_points=60, min_separation=8)
    strongest = pts.points[:4]
    # the white square covers pixels 22..41, so its outline runs at 21.5 and 41.5
    analytic = [(21.5, 21.5), (41.5, 21.5), (21.5, 41.5), (41.5, 41.5)]
    for corner in analytic:
        d = np.hypot(*(strongest - corner).T)
        assert d.min() <= 2.0, (corner, strongest)
    # each analytic corner claims a distinct detection
    nearest = {int(np.argmin(np.hypot(*(strongest - c).T))) for c in analytic}
    assert len(nearest) == 4


def test_detection_is_deterministic(shapes):
    a = detect_corners(shapes)
    b = detect_corners(shapes)
    assert np.array_equal(a.points, b.points)
    assert a.source == "automatic"


@pytest.mark.parametrize("sep", [4.0, 8.0, 15.0])
def test_min_separation_respected(checker, sep):
    pts = detect_corners(checker, max_points=300, min_separation=sep).points
    for i, j in itertools.combinations(range(len(pts)), 2):
        assert np.hypot(*(pts[i] - pts[j])) >= sep


def test_max_points_cap(checker):
    assert len(detect_corners(checker, max_points=10)) == 10


@pytest.mark.parametrize("dx,dy", [(3, 0), (0, 5), (-4, 2), (7, -6)])
def test_translation_equivariance(shapes, dx, dy):
    src = shapes.data
    shifted = np.roll(np.roll(src, dy, axis=0), dx, axis=1)
    a = detect_corners(Image(src), max_points=400).points
    b = detect_corners(Image(shifted), max_points=400).points
    margin = 20
    interior = (
        (a[:, 0] > margin + abs(dx)) & (a[:, 0] < 255 - margin - abs(dx))
        & (a[:, 1] > margin + abs(dy)) & (a[:, 1] < 255 - margin - abs(dy))
    )
    moved = a[interior] + (dx, dy)
    assert len(moved) > 20
    for p in moved:
        assert np.hypot(*(b - p).T).min() <= 0.5


def test_mask_suppresses_corners_near_missing_data(checker):
    mask = np.ones(checker.shape, bool)
    mask[:, :128] = False
    pts = detect_corners(checker, mask=mask).points
    assert pts[:, 0].min() > 128

import numpy as np
import pytest

from graffiti_cdpr.geometry import Rect, point_segment_distance, polyline_length
from graffiti_cdpr.strokes import INFILL, TRAVEL, PaintPath, Stroke, export_library, load_library


def test_rect_basics():
    r = Rect(0, 0, 2, 1)
    assert r.width == 2 and r.height == 1
    assert r.contains(Rect(0.5, 0.2, 1.5, 0.8))
    assert not r.contains(Rect(0.5, 0.2, 2.01, 0.8))
    assert r.intersection(Rect(1, 0.5, 3, 3)) == Rect(1, 0.5, 2, 1)
    assert r.intersection(Rect(3, 3, 4, 4)) is None
    with pytest.raises(ValueError):
        Rect(1, 0, 0, 1)


def test_polyline_length_and_segment_distance():
    assert polyline_length([[0, 0], [3, 4], [3, 5]]) == pytest.approx(6.0)
    d = point_segment_distance(np.array([[0.5, 1.0], [2.0, 0.0], [-1.0, 0.0]]), (0, 0), (1, 0))
    np.testing.assert_allclose(d, [1.0, 1.0, 1.0])


def test_stroke_invariants():
    with pytest.raises(ValueError, match=">=2 points"):
        Stroke([[0, 0]])
    with pytest.raises(ValueError, match="finite"):
        Stroke([[0, 0], [np.nan, 1]])
    with pytest.raises(ValueError, match="strictly increasing"):
        Stroke([[0, 0], [1, 0]], vertex_times=[0.0, 0.0])
    with pytest.raises(ValueError, match="match"):
        Stroke([[0, 0], [1, 0]], vertex_times=[0.0])
    s = Stroke([[0, 0], [1, 0]])
    assert s.length == 1.0 and s.paint


def test_stroke_transform():
    s = Stroke([[1, 0], [2, 0]]).transformed(2.0, np.pi / 2, (1, 1))
    np.testing.assert_allclose(s.points, [[1, 3], [1, 5]], atol=1e-12)


def test_paintpath_rejects_gaps():
    a = Stroke([[0, 0], [1, 0]])
    b = Stroke([[1, 1e-6], [2, 0]])
    with pytest.raises(ValueError, match="continuous"):
        PaintPath((a, b))
    p = PaintPath((a, Stroke([[1, 0], [2, 0]])))
    assert p.max_gap() == 0.0


def test_library_round_trip_exact(tmp_path):
    pts = np.array([[0.1, 1 / 3], [2 ** -0.5, np.pi]])
    lib = {"A": [Stroke(pts, vertex_times=[0.0, 1 / 7]), Stroke(pts[::-1], paint=False, kind=TRAVEL)]}
    path = tmp_path / "lib.json"
    export_library(lib, path)
    back = load_library(path)
    assert list(back) == ["A"] and len(back["A"]) == 2
    assert np.array_equal(back["A"][0].points, pts)
    assert np.array_equal(back["A"][0].vertex_times, [0.0, 1 / 7])
    assert back["A"][1].paint is False and back["A"][1].kind == TRAVEL


def test_library_empty_and_duplicates(tmp_path):
    export_library({}, tmp_path / "empty.json")
    assert load_library(tmp_path / "empty.json") == {}
    s = Stroke([[0, 0], [1, 0]], kind=INFILL)
    with pytest.raises(ValueError, match="duplicate name"):
        export_library([("A", [s]), ("A", [s])], tmp_path / "dup.json")

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scooter_nav import kernels
from scooter_nav.pathmodel import (DegenerateSegment, NonPositiveWidth, Segment, TooFewWaypoints, build_path,
                                   load_path, path_sdf, path_sdf_batch, project, sample, segment_parameter,
                                   segment_sdf)


def seg(a, b, w=0.75):
    return Segment(np.asarray(a, float), np.asarray(b, float), w)


def test_build_single_segment():
    p = build_path([(0, 0), (10, 0)], [0.75])
    assert len(p) == 1 and p.total_length == 10.0


def test_build_two_segments():
    p = build_path([(0, 0), (10, 0), (10, 5)], [0.75, 0.75])
    assert list(p.starts) == [0.0, 10.0]
    assert p.total_length == 15.0


@pytest.mark.parametrize("wps,widths,err", [
    ([(0, 0), (0, 0)], [0.75], DegenerateSegment),
    ([(0, 0)], [], TooFewWaypoints),
    ([(0, 0), (1, 0)], [0.0], NonPositiveWidth),
    ([(0, 0), (1, 0)], [-1.0], NonPositiveWidth),
])
def test_build_errors(wps, widths, err):
    with pytest.raises(err):
        build_path(wps, widths)


def test_segment_parameter_examples():
    s = seg((0, 0), (2, 0))
    assert segment_parameter((0, 0), s) == 0.0
    assert segment_parameter((2, 0), s) == 1.0
    assert segment_parameter((1, 5), s) == 0.5
    assert segment_parameter((-3, 1), s) == 0.0
    assert segment_parameter((9, 1), s) == 1.0


def test_segment_sdf_examples():
    s = seg((0, 0), (10, 0))
    assert segment_sdf((3, 0), s) == 1.0
    assert segment_sdf((3, 0.75), s) == pytest.approx(0.0, abs=1e-15)
    assert segment_sdf((3, 1.5), s) == pytest.approx(-3.0)


def test_path_sdf_on_waypoints(l_path):
    for wp in l_path.waypoints:
        assert path_sdf(wp, l_path) == 1.0


def test_path_sdf_inside_second_only(l_path):
    p = (10.5, 6.0)
    assert path_sdf(p, l_path) == pytest.approx(segment_sdf(p, l_path.segments[1]))


def test_path_sdf_far_outside(l_path):
    p = (30.0, -20.0)
    v = path_sdf(p, l_path)
    assert v < 0
    assert v == max(segment_sdf(p, s) for s in l_path.segments)


def test_project_midpoint(l_path):
    pr = project((5, 0), l_path)
    assert pr.s == 5.0 and pr.distance == 0.0 and pr.seg_index == 0


def test_project_prefers_nearer_segment(l_path):
    pr = project((11, 1), l_path)
    assert pr.seg_index == 1
    assert pr.s == pytest.approx(11.0)
    assert pr.distance == pytest.approx(1.0)


def test_project_tie_takes_larger_s(l_path):
    # both candidates reach the corner at s = 10; indices are 0-based
    pr = project((11, -1), l_path)
    assert pr.seg_index == 0
    assert pr.s == pytest.approx(10.0)
    assert pr.distance == pytest.approx(math.sqrt(2))


def test_sample_examples(l_path):
    p, psi = sample(l_path, 0.0)
    assert np.allclose(p, [0, 0]) and psi == 0.0
    p, psi = sample(l_path, 10.0)
    assert np.allclose(p, [10, 0]) and psi == pytest.approx(math.pi / 2)
    p, psi = sample(l_path, 12.0)
    assert np.allclose(p, [10, 2]) and psi == pytest.approx(math.pi / 2)
    p, psi = sample(l_path, 99.0)
    assert np.allclose(p, [10, 10]) and psi == pytest.approx(math.pi / 2)


def test_segment_sdf_capsule_membership(rng):
    s = seg((1, -2), (4, 3), 0.6)
    pts = rng.uniform(-3, 8, size=(10_000, 2))
    d = s.b - s.a
    h = np.clip((pts - s.a) @ d / (d @ d), 0, 1)
    dist = np.linalg.norm(pts - (s.a + h[:, None] * d), axis=1)
    vals = np.array([segment_sdf(p, s) for p in pts])
    assert np.array_equal(vals > 0, dist < s.w)


@given(st.lists(st.tuples(st.floats(-20, 20), st.floats(-20, 20)), min_size=2, max_size=8),
       st.floats(-25, 25), st.floats(-25, 25))
def test_project_distance_and_parameter(wps, px, py):
    try:
        path = build_path(wps, 0.5)
    except DegenerateSegment:
        return
    pr = project((px, py), path)
    assert 0.0 <= pr.s <= path.total_length + 1e-12
    assert pr.distance == pytest.approx(math.dist(pr.closest, (px, py)), abs=1e-12)
    assert pr.distance <= min(math.dist((px, py), w) for w in path.waypoints) + 1e-12
    for s in path.segments:
        assert 0.0 <= segment_parameter((px, py), s) <= 1.0


def test_sample_of_projection_is_closest(straight_path, rng):
    for _ in range(50):
        p = np.array([rng.uniform(0, 100), rng.uniform(-0.7, 0.7)])
        pt, _ = sample(straight_path, project(p, straight_path).s)
        assert np.allclose(pt, [p[0], 0.0], atol=1e-12)


def test_batch_tie_goes_to_larger_index():
    path = build_path([(0, 0), (10, 0), (10, 10)], 0.75)
    p = np.array([[11.0, -1.0]])
    for mod in (kernels.backend_module("python"), kernels):
        _, _, idx = mod.path_sdf(p, path.a, path.b, path.w)
        assert idx[0] == 1


def test_load_planar_and_geodetic(tmp_path):
    f = tmp_path / "p.json"
    f.write_text(json.dumps({"waypoints_enu": [[0, 0], [3, 4]], "half_widths": [0.5]}))
    path, frame = load_path(f)
    assert path.total_length == pytest.approx(5.0) and frame is None
    g = tmp_path / "g.json"
    g.write_text(json.dumps({"origin": {"lat": 48.7, "lon": 9.1, "alt": 0},
                             "waypoints": [{"lat": 48.7, "lon": 9.1}, {"lat": 48.7001, "lon": 9.1}],
                             "half_widths": [0.75]}))
    path, frame = load_path(g)
    assert path.total_length == pytest.approx(11.12, abs=0.01)
    assert abs(path.headings[0] - math.pi / 2) < 1e-6

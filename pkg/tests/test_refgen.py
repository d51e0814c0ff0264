import math

import numpy as np
import pytest

from scooter_nav.localization import EkfBelief
from scooter_nav.pathmodel import build_path, path_sdf_batch
from scooter_nav.refgen import HorizonParams, build_reference, horizon, reference_from_arclength
from scooter_nav.vehicle import VehicleParams

VP = VehicleParams()


def belief_with_front_at(x, y, psi=0.0):
    off = VP.L - VP.l_r
    return EkfBelief(np.array([x - off * math.cos(psi), y - off * math.sin(psi), psi]), np.eye(3) * 1e-3)


@pytest.mark.parametrize("v_max,f,T,N,d", [
    (0.7, 8.0, 6 / 0.7, 68, 5.4),
    (0.75, 8.0, 8.0, 64, 5.4),
    (6.0, 1.0, 1.0, 1, 5.4),
])
def test_horizon_examples(v_max, f, T, N, d):
    t_, n_, d_ = horizon(HorizonParams(v_max=v_max, f_mpc=f))
    assert t_ == pytest.approx(T) and n_ == N and d_ == pytest.approx(d)


def test_straight_reference(straight_path):
    ref = build_reference(straight_path, belief_with_front_at(0, 0), HorizonParams(), VP)
    k = np.arange(69)
    assert ref.states.shape == (69, 6) and ref.inputs.shape == (68, 2)
    assert np.allclose(ref.states[:, 0], k * 5.4 / 68, atol=1e-12)
    assert np.all(ref.states[:, 2] == pytest.approx(0.63))
    assert np.allclose(ref.states[:, 3:5], [1, 0])
    assert np.all(ref.states[:, 5] == 0) and np.all(ref.inputs == 0)


def test_reference_at_path_end(straight_path):
    ref = build_reference(straight_path, belief_with_front_at(100, 0), HorizonParams(), VP)
    assert np.allclose(ref.states[:, :2], [100, 0])
    assert np.all(ref.states[:, 2] == 0)
    assert np.allclose(ref.states[:, 3:5], [1, 0])


def test_lateral_offset_does_not_change_reference(straight_path):
    a = build_reference(straight_path, belief_with_front_at(3, 0), HorizonParams(), VP)
    b = build_reference(straight_path, belief_with_front_at(3, 1), HorizonParams(), VP)
    assert np.array_equal(a.states, b.states)


def test_partial_end_of_path_clamps():
    path = build_path([(0, 0), (3, 0)], 0.75)
    ref = reference_from_arclength(path, 0.0, HorizonParams())
    beyond = ref.s > 3.0
    assert beyond.any() and not beyond.all()
    assert np.all(ref.states[beyond, 2] == 0) and np.all(ref.states[~beyond, 2] == pytest.approx(0.63))
    assert np.allclose(ref.states[beyond, :2], [3, 0])


def test_reference_invariants_on_turning_path():
    path = build_path([(0, 0), (4, 0), (4, 3), (-1, 3)], 0.75)
    hp = HorizonParams()
    _, N, d = horizon(hp)
    prev = -1.0
    for s0 in np.linspace(0, path.total_length, 40):
        ref = reference_from_arclength(path, s0, hp)
        assert np.all(np.diff(ref.s) > 0)
        assert ref.s[0] >= prev
        prev = ref.s[0]
        assert np.all(path_sdf_batch(ref.states[:, :2], path)[0] >= 1 - 1e-9)
        step = np.linalg.norm(np.diff(ref.states[:, :2], axis=0), axis=1)
        assert np.all(step <= d / N + 1e-12)
        assert np.allclose(ref.states[:, 3] ** 2 + ref.states[:, 4] ** 2, 1.0)
        assert set(np.round(ref.states[:, 2], 12)) <= {0.63, 0.0}

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, rk4_cvtr, wrap
from racemtt.motion import EPS_OMEGA, TargetState, jacobian, process_noise, step, wrap_angle

finite = dict(allow_nan=False, allow_infinity=False)
states = st.tuples(
    st.floats(-500, 500, **finite),
    st.floats(-500, 500, **finite),
    st.floats(0, 100, **finite),
    st.floats(-math.pi, math.pi, **finite),
)
omegas = st.floats(-2, 2, **finite)
steps = st.floats(1e-3, 0.2, **finite)


def test_straight_example():
    np.testing.assert_allclose(step((0, 0, 10, 0), 0.0, 0.5), [5, 0, 10, 0])


def test_quarter_arc_example():
    out = step((0, 0, math.pi, 0), math.pi / 2, 1.0)
    np.testing.assert_allclose(out, [2, 2, math.pi, math.pi / 2], atol=1e-12)
    ref = rk4_cvtr([[0, 0, math.pi, 0]], [math.pi / 2], [1.0])[0]
    np.testing.assert_allclose(out[:2], ref[:2], atol=1e-9)


def test_matches_rk4_on_random_draws():
    rng = np.random.default_rng(0)
    n = 100
    s = np.column_stack([rng.uniform(-200, 200, n), rng.uniform(-200, 200, n),
                         rng.uniform(0, 100, n), rng.uniform(-math.pi, math.pi, n)])
    w = rng.uniform(-2, 2, n)
    T = rng.uniform(1e-3, 0.2, n)
    ref = rk4_cvtr(s, w, T)
    got = np.array([step(s[k], w[k], T[k]) for k in range(n)])
    assert np.abs(got[:, :2] - ref[:, :2]).max() < 1e-9
    np.testing.assert_array_equal(got[:, 2], s[:, 2])
    assert np.abs(wrap(got[:, 3] - ref[:, 3])).max() < 1e-12


@settings(max_examples=300, deadline=None)
@given(states, omegas, steps, steps)
def test_semigroup(s, w, t1, t2):
    one = step(s, w, t1 + t2)
    two = step(step(s, w, t1), w, t2)
    assert np.abs(one[:2] - two[:2]).max() < 1e-12
    assert abs(wrap_angle(one[3] - two[3])) < 1e-12
    assert one[2] == s[2]


@settings(max_examples=200, deadline=None)
@given(states, st.floats(0, 0.1, **finite).filter(lambda t: t > 0))
def test_branch_seam_continuity(s, T):
    base = step(s, 0.0, T)
    for w in (EPS_OMEGA, -EPS_OMEGA, 1.0000001 * EPS_OMEGA, -1.0000001 * EPS_OMEGA):
        assert np.abs(step(s, w, T)[:2] - base[:2]).max() <= 1e-6


@settings(max_examples=300, deadline=None)
@given(states, omegas, steps)
def test_theta_wrapped_and_v_invariant(s, w, T):
    out = step(s, w, T)
    assert -math.pi < out[3] <= math.pi
    assert out[2] == s[2]


def test_jacobian_straight_closed_form():
    s = (1.0, 2.0, 30.0, 0.4)
    T = 0.05
    A = jacobian(s, 0.0, T)
    expect = np.eye(4)
    expect[0, 2], expect[0, 3] = T * math.cos(0.4), -30 * T * math.sin(0.4)
    expect[1, 2], expect[1, 3] = T * math.sin(0.4), 30 * T * math.cos(0.4)
    np.testing.assert_allclose(A, expect, rtol=0, atol=1e-15)


def test_jacobian_stationary_heading_columns():
    A = jacobian((3.0, 4.0, 0.0, 1.1), 0.7, 0.1)
    assert A[0, 3] == 0.0 and A[1, 3] == 0.0


def _fd_check(s, w, T, tol=1e-5):
    A = jacobian(s, w, T)
    J = central_difference(lambda x: step(x, w, T), s, angle_rows=(3,))
    assert np.all(np.abs(A - J) <= tol * np.maximum(1.0, np.abs(A)))


def test_jacobian_example_finite_differences():
    rng = np.random.default_rng(3)
    s = np.array([rng.uniform(-50, 50), rng.uniform(-50, 50), 40.0, 0.3])
    _fd_check(s, 0.3, 0.05)


@settings(max_examples=200, deadline=None)
@given(states, st.one_of(omegas, st.floats(-2e-6, 2e-6)), steps)
def test_jacobian_matches_finite_differences_everywhere(s, w, T):
    _fd_check(np.array(s), w, T)


@pytest.mark.parametrize("T", [0.0, -0.1, float("nan"), float("inf")])
def test_bad_step_rejected(T):
    with pytest.raises(ValueError):
        step((0, 0, 1, 0), 0.1, T)


def test_non_finite_state_rejected():
    with pytest.raises(ValueError):
        step((0, float("nan"), 1, 0), 0.1, 0.1)
    with pytest.raises(ValueError):
        jacobian((0, 0, 1, 0), float("inf"), 0.1)


def test_wrap_angle_range():
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-0.5) == -0.5


def test_process_noise_scaling_and_validation():
    Q = process_noise([1, 2, 3, 4], 0.5)
    np.testing.assert_array_equal(Q, np.diag([0.5, 1, 1.5, 2]))
    assert np.linalg.eigvalsh(Q).min() >= 0
    with pytest.raises(ValueError):
        process_noise([1, -2, 3, 4], 0.1)
    with pytest.raises(ValueError):
        process_noise(np.arange(16.0).reshape(4, 4), 0.1)
    with pytest.raises(ValueError):
        process_noise([1, 2, 3, 4], 0.0)


def test_target_state_as_array():
    np.testing.assert_array_equal(TargetState(1, 2, 3, 0.5).as_array(), [1, 2, 3, 0.5])

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from edas import envsim
from edas.envsim import (GoalSpec, NoiseRegion, PointMassParams, ReacherParams,
                         apply_region_noise, goal_reward, make_env, point_mass_step,
                         reacher_mass_matrix, reacher_step, sample_goals, sample_initial_state)
from edas.exceptions import InvalidArgument

finite = st.floats(-3, 3, allow_nan=False)
vec4 = arrays(float, 4, elements=finite)
vec2 = arrays(float, 2, elements=st.floats(-1, 1))


# -- point mass ---------------------------------------------------------------

def test_point_mass_unit_push():
    out = point_mass_step(np.zeros(4), np.array([1.0, 0.0]))
    assert np.allclose(out, [0.0025, 0.0, 0.05, 0.0], atol=1e-15)


def test_point_mass_rest_is_fixed():
    s = np.array([0.3, -0.4, 0.0, 0.0])
    assert np.array_equal(point_mass_step(s, np.zeros(2)), s)


def test_point_mass_clips_action_and_speed():
    p = PointMassParams()
    out = point_mass_step(np.array([0, 0, 1.99, 0]), np.array([5.0, 0.0]), p)
    assert out[2] == p.max_speed
    assert np.allclose(point_mass_step(np.zeros(4), [3.0, 0.0]), point_mass_step(np.zeros(4), [1.0, 0.0]))


def test_point_mass_rejects_non_finite():
    with pytest.raises(InvalidArgument):
        point_mass_step(np.array([np.nan, 0, 0, 0]), np.zeros(2))


@given(vec4, vec2, arrays(float, 2, elements=finite))
def test_point_mass_position_equivariance(s, a, shift):
    u = np.concatenate([shift, [0.0, 0.0]])
    lhs, rhs = point_mass_step(s + u, a), point_mass_step(s, a) + u
    assert np.allclose(lhs, rhs, atol=1e-12, rtol=0)


@given(arrays(float, 4, elements=st.floats(-1, 1)), vec2, st.floats(-0.5, 0.5))
def test_point_mass_velocity_discrepancy(s, a, w):
    u = np.array([0, 0, w, w])
    gap = point_mass_step(s + u, a) - (point_mass_step(s, a) + u)
    assert np.allclose(gap[:2], w * 0.05, atol=1e-12)
    assert np.allclose(gap[2:], 0, atol=1e-12)


# -- reacher ------------------------------------------------------------------

def _rod_kinetic_matrix(theta_wrist, p, n=4000):
    """Inertia matrix from kinetic energy of point masses spread along the rods."""
    def kinetic(omega):
        w1, w2 = omega
        r = (np.arange(n) + 0.5) / n
        # rod 1: points at distance r*l1 from the shoulder
        v1 = r * p.l1 * w1
        e1 = 0.5 * (p.m1 / n) * np.sum(v1 ** 2)
        # rod 2: elbow velocity plus rotation about the elbow
        elbow = p.l1 * w1 * np.array([0.0, 1.0])  # shoulder angle 0 without loss of generality
        ang = theta_wrist
        along = np.array([np.cos(ang), np.sin(ang)])
        perp = np.array([-along[1], along[0]])
        v2 = elbow[None, :] + (r * p.l2)[:, None] * (w1 + w2) * perp[None, :]
        e2 = 0.5 * (p.m2 / n) * np.sum(v2 ** 2)
        return e1 + e2
    e = np.eye(2)
    m11, m22 = 2 * kinetic(e[0]), 2 * kinetic(e[1])
    m12 = kinetic(e[0] + e[1]) - 0.5 * (m11 + m22)
    return np.array([[m11, m12], [m12, m22]])


@pytest.mark.parametrize("theta_wrist", [0.0, 0.7, -2.0, np.pi])
def test_reacher_mass_matrix_matches_rod_integral(theta_wrist):
    p = ReacherParams()
    assert np.allclose(reacher_mass_matrix(theta_wrist, p), _rod_kinetic_matrix(theta_wrist, p),
                       rtol=1e-6, atol=1e-8)


def test_reacher_first_step_from_rest():
    p = ReacherParams()
    accel = np.linalg.solve(_rod_kinetic_matrix(0.0, p), [1.0, 0.0])
    omega = accel * p.dt
    expected = np.concatenate([omega * p.dt, omega])
    assert np.allclose(reacher_step(np.zeros(4), [1.0, 0.0], p), expected, rtol=1e-6)


def test_reacher_rest_is_fixed():
    s = np.array([0.4, -1.1, 0.0, 0.0])
    assert np.array_equal(reacher_step(s, np.zeros(2)), s)


@given(vec4, vec2, st.floats(-10, 10))
def test_reacher_shoulder_equivariance(s, a, delta):
    u = np.array([delta, 0, 0, 0])
    assert np.allclose(reacher_step(s + u, a), reacher_step(s, a) + u, atol=1e-12, rtol=0)


def test_reacher_wrist_breaks_equivariance():
    s, a = np.array([0.0, 0.0, 3.0, -2.0]), np.array([1.0, -1.0])
    u = np.array([0, 1.0, 0, 0])
    gap = reacher_step(s + u, a) - (reacher_step(s, a) + u)
    assert np.max(np.abs(gap)) > 1e-3


def test_reacher_velocity_clip():
    out = reacher_step(np.array([0, 0, 8.0, 0]), np.array([1.0, 0.0]))
    assert np.all(np.abs(out[2:]) <= envsim.REACHER_MAX_VEL)


def _energy(s, p):
    m = reacher_mass_matrix(s[1], p)
    return 0.5 * s[2:] @ m @ s[2:]


@settings(max_examples=20, deadline=None)
@given(arrays(float, 4, elements=st.floats(-2, 2)))
def test_reacher_free_motion_nearly_conserves_energy(s):
    # Coriolis terms do no work; only integration error remains
    p = ReacherParams(damping=1e-9, dt=0.001)
    e0 = _energy(s, p)
    x = s.copy()
    for _ in range(200):
        x = reacher_step(x, np.zeros(2), p)
    assert abs(_energy(x, p) - e0) <= 0.02 * e0 + 1e-9


# -- goals and rewards --------------------------------------------------------

def test_goal_reward_examples():
    s = np.array([0.2, -0.3, 0.0, 0.0])
    assert goal_reward(s, GoalSpec((0.2, -0.3))) == 1.0
    assert goal_reward(s, GoalSpec((0.2 + 1.0, -0.3), tolerance=0.1)) == 0.0


def test_goal_reward_dimension_mismatch():
    with pytest.raises(InvalidArgument):
        goal_reward(np.zeros(4), np.zeros(3))


@given(vec4, vec2, arrays(float, 2, elements=finite))
def test_goal_reward_translation_invariant(s, g, shift):
    u = np.concatenate([shift, [0, 0]])
    assert goal_reward(s, g) == goal_reward(s + u, g + shift)


def test_initial_states_point_mass():
    env = make_env("point_mass")
    x = sample_initial_state(env, np.random.default_rng(0), 10_000)
    assert np.all(np.abs(x[:, :2]) <= 1.0) and np.all(x[:, 2:] == 0)
    assert np.all(np.abs(x[:, :2].mean(axis=0)) < 0.02)
    y = sample_initial_state(env, np.random.default_rng(0), 10_000)
    assert np.array_equal(x, y)


def test_initial_states_reacher():
    x = sample_initial_state(make_env("reacher"), np.random.default_rng(1), 1000)
    assert np.all(np.abs(x[:, :2]) <= np.pi) and np.all(x[:, 2:] == 0)


def test_goal_splits():
    rng = np.random.default_rng(3)
    pm, re = make_env("point_mass"), make_env("reacher")
    assert [g.goal for g in sample_goals(pm, "train", 5, rng)] == [(0.0, 0.0)] * 5
    test = np.array([g.goal for g in sample_goals(pm, "test", 10_000, rng)])
    quadrants = {(bool(x > 0), bool(y > 0)) for x, y in test}
    assert len(quadrants) == 4 and np.all(np.abs(test) <= 1)
    wedge = np.array([g.goal for g in sample_goals(re, "train", 1000, rng)])
    assert np.all(np.abs(wedge) <= np.pi / 4)
    with pytest.raises(InvalidArgument):
        sample_goals(pm, "val", 1, rng)


# -- region noise -------------------------------------------------------------

def test_region_noise_examples():
    rng = np.random.default_rng(0)
    left = np.array([-0.5, 0.1, 0.2, 0.3])
    assert np.array_equal(apply_region_noise(left, NoiseRegion(), rng), left)
    right = np.array([0.5, 0.1, 0.2, 0.3])
    assert np.array_equal(apply_region_noise(right, NoiseRegion(amplitude=0.0), rng), right)
    noisy = apply_region_noise(right, NoiseRegion(amplitude=0.1), rng)
    assert np.all(np.abs(noisy - right) <= 0.1) and not np.array_equal(noisy, right)


def test_region_noise_uses_state_predicate_when_given():
    rng = np.random.default_rng(0)
    nxt = np.array([0.5, 0, 0, 0])
    out = apply_region_noise(nxt, NoiseRegion(), rng, state=np.array([-0.5, 0, 0, 0]))
    assert np.array_equal(out, nxt)


def test_param_validation():
    with pytest.raises(InvalidArgument):
        PointMassParams(dt=0)
    with pytest.raises(InvalidArgument):
        ReacherParams(l1=-1)
    with pytest.raises(InvalidArgument):
        GoalSpec((0, 0), tolerance=0)
    with pytest.raises(InvalidArgument):
        NoiseRegion(amplitude=-0.1)
    with pytest.raises(InvalidArgument):
        make_env("cartpole")


def test_exact_model_matches_simulator_on_tape():
    from edas.diffcore import Tape
    m = envsim.ExactPointMassModel()
    rng = np.random.default_rng(4)
    s, a = rng.uniform(-2.5, 2.5, (20, 4)), rng.uniform(-1.5, 1.5, (20, 2))
    assert np.allclose(m.predict_on_tape(Tape(), s, a).value, point_mass_step(s, a), atol=1e-14, rtol=0)

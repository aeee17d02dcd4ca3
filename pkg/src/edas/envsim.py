"""Point Mass and Planar Reacher simulators with goal and noise machinery.

Both step functions accept a single state of shape ``(4,)`` or a batch of
shape ``(n, 4)`` and integrate with semi-implicit Euler (velocity first,
then position with the new velocity).
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidArgument, NumericalFailure

POINT_MASS = "point_mass"
REACHER = "reacher"
ENV_KINDS = (POINT_MASS, REACHER)

REACHER_MAX_VEL = 8.0


@dataclass(frozen=True)
class PointMassParams:
    dt: float = 0.05
    action_gain: float = 1.0
    max_speed: float = 2.0
    arena_half_width: float = 1.0

    def __post_init__(self):
        if not (self.dt > 0 and self.max_speed > 0 and self.arena_half_width > 0):
            raise InvalidArgument(f"invalid point-mass parameters {self}")


@dataclass(frozen=True)
class ReacherParams:
    dt: float = 0.02
    l1: float = 0.5
    l2: float = 0.5
    m1: float = 1.0
    m2: float = 1.0
    damping: float = 0.1
    torque_gain: float = 1.0

    def __post_init__(self):
        if min(self.dt, self.l1, self.l2, self.m1, self.m2, self.damping,
               self.torque_gain) <= 0:
            raise InvalidArgument(f"reacher parameters must be positive: {self}")


@dataclass(frozen=True)
class GoalSpec:
    goal: tuple
    tolerance: float = 0.1

    def __post_init__(self):
        if not self.tolerance > 0:
            raise InvalidArgument("goal tolerance must be positive")

    @property
    def vector(self):
        return np.asarray(self.goal, dtype=float)


@dataclass(frozen=True)
class NoiseRegion:
    dim: int = 0
    threshold: float = 0.0
    amplitude: float = 0.1

    def __post_init__(self):
        if self.amplitude < 0:
            raise InvalidArgument("noise amplitude must be >= 0")


@dataclass(frozen=True)
class EnvSpec:
    """What the rest of the package needs to know about an environment."""
    kind: str
    sdim: int
    adim: int
    gdim: int
    goal_dims: tuple  # state coordinates compared against the goal
    translation_mask: tuple  # dims known a priori to be translation symmetric
    params: object

    def step(self, s, a):
        if self.kind == POINT_MASS:
            return point_mass_step(s, a, self.params)
        return reacher_step(s, a, self.params)

    def achieved(self, s):
        return np.asarray(s, dtype=float)[..., list(self.goal_dims)]

    def velocity(self, s):
        return np.asarray(s, dtype=float)[..., 2:4]


def make_env(kind, params=None):
    if kind == POINT_MASS:
        return EnvSpec(POINT_MASS, 4, 2, 2, (0, 1), (0, 1), params or PointMassParams())
    if kind == REACHER:
        return EnvSpec(REACHER, 4, 2, 2, (0, 1), (0, 1), params or ReacherParams())
    raise InvalidArgument(f"unknown environment {kind!r}; expected one of {ENV_KINDS}")


def _check_state(s):
    s = np.asarray(s, dtype=float)
    if s.shape[-1] != 4:
        raise InvalidArgument(f"state must have 4 entries, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise InvalidArgument("state contains non-finite values")
    return s


def point_mass_step(s, a, p=PointMassParams()):
    s = _check_state(s)
    a = np.clip(np.asarray(a, dtype=float), -1.0, 1.0)
    pos, vel = s[..., :2], s[..., 2:]
    vel2 = np.clip(vel + p.action_gain * a * p.dt, -p.max_speed, p.max_speed)
    pos2 = pos + vel2 * p.dt
    return np.concatenate([pos2, vel2], axis=-1)


def reacher_mass_matrix(theta_wrist, p=ReacherParams()):
    """Inertia matrix of two uniform rods; shape ``(..., 2, 2)``."""
    lc1, lc2 = p.l1 / 2, p.l2 / 2
    i1, i2 = p.m1 * p.l1 ** 2 / 12, p.m2 * p.l2 ** 2 / 12
    c = np.cos(theta_wrist)
    m11 = p.m1 * lc1 ** 2 + i1 + p.m2 * (p.l1 ** 2 + lc2 ** 2 + 2 * p.l1 * lc2 * c) + i2
    m12 = p.m2 * (lc2 ** 2 + p.l1 * lc2 * c) + i2
    m22 = p.m2 * lc2 ** 2 + i2 + 0.0 * c
    return np.stack([np.stack([m11, m12], -1), np.stack([m12, m22], -1)], -2)


def reacher_coriolis(theta_wrist, omega, p=ReacherParams()):
    """Velocity-product terms C(q, w) w of the gravity-free arm."""
    h = p.m2 * p.l1 * (p.l2 / 2) * np.sin(theta_wrist)
    w1, w2 = omega[..., 0], omega[..., 1]
    return np.stack([-h * (2 * w1 * w2 + w2 * w2), h * w1 * w1], -1)


def reacher_step(s, a, p=ReacherParams()):
    s = _check_state(s)
    tau = np.clip(np.asarray(a, dtype=float), -1.0, 1.0) * p.torque_gain
    theta, omega = s[..., :2], s[..., 2:]
    mass = reacher_mass_matrix(theta[..., 1], p)
    det = mass[..., 0, 0] * mass[..., 1, 1] - mass[..., 0, 1] * mass[..., 1, 0]
    if np.any(det <= 0):
        raise NumericalFailure("singular reacher mass matrix")
    rhs = tau - reacher_coriolis(theta[..., 1], omega, p) - p.damping * omega
    accel = np.linalg.solve(mass, rhs[..., None])[..., 0]
    omega2 = np.clip(omega + accel * p.dt, -REACHER_MAX_VEL, REACHER_MAX_VEL)
    theta2 = theta + omega2 * p.dt
    return np.concatenate([theta2, omega2], axis=-1)


def goal_reward(next_state, goal, env=None, tolerance=0.1):
    """1.0 where the goal coordinates of ``next_state`` are within tolerance.

    ``goal`` may be a :class:`GoalSpec` or a raw vector/batch; ``env`` picks
    the goal-relevant coordinates (positions for both built-in tasks).
    """
    if isinstance(goal, GoalSpec):
        tolerance = goal.tolerance
        goal = goal.vector
    goal = np.asarray(goal, dtype=float)
    next_state = np.asarray(next_state, dtype=float)
    dims = list(env.goal_dims) if env is not None else [0, 1]
    if goal.shape[-1] != len(dims):
        raise InvalidArgument(f"goal has {goal.shape[-1]} entries, expected {len(dims)}")
    dist = np.linalg.norm(next_state[..., dims] - goal, axis=-1)
    return (dist < tolerance).astype(float)


def sample_initial_state(env, rng, n=None):
    """Random start: uniform positions (or angles), zero velocity."""
    shape = (2,) if n is None else (n, 2)
    if env.kind == POINT_MASS:
        half = env.params.arena_half_width
        pos = rng.uniform(-half, half, size=shape)
    else:
        pos = rng.uniform(-np.pi, np.pi, size=shape)
    return np.concatenate([pos, np.zeros(shape)], axis=-1)


REACHER_TRAIN_HALF = np.pi / 4


def sample_goals(env, split, n, rng, tolerance=0.1):
    """List of :class:`GoalSpec` for the train or test split."""
    if n < 1:
        raise InvalidArgument("need at least one goal")
    if split not in ("train", "test"):
        raise InvalidArgument(f"unknown split {split!r}")
    if env.kind == POINT_MASS:
        if split == "train":
            vecs = np.zeros((n, 2))
        else:
            half = env.params.arena_half_width
            vecs = rng.uniform(-half, half, size=(n, 2))
    else:
        half = REACHER_TRAIN_HALF if split == "train" else np.pi
        vecs = rng.uniform(-half, half, size=(n, 2))
    return [GoalSpec(tuple(v), tolerance) for v in vecs]


def apply_region_noise(next_state, region, rng, state=None):
    """Add U[-amp, amp] noise to every coordinate where the region predicate holds.

    The predicate reads ``state[dim] > threshold``; ``state`` defaults to
    ``next_state`` itself.
    """
    next_state = np.asarray(next_state, dtype=float)
    probe = next_state if state is None else np.asarray(state, dtype=float)
    noise = rng.uniform(-region.amplitude, region.amplitude, size=next_state.shape)
    inside = probe[..., region.dim] > region.threshold
    return np.where(inside[..., None], next_state + noise, next_state)


class ExactPointMassModel:
    """The true point-mass step behind the dynamics-model interface.

    Serves as a learning-free stand-in for a fitted model: ``predict_next``
    is :func:`point_mass_step` and ``predict_on_tape`` records the same
    arithmetic on an autodiff tape (speed clip included).
    """

    _POS = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
    _VEL = np.roll(_POS, 2, axis=0)

    def __init__(self, params=PointMassParams()):
        self.params = params

    def predict_next(self, s, a):
        return point_mass_step(s, a, self.params)

    def predict_on_tape(self, tape, s, a):
        p = self.params
        s = tape.lift(s)
        a = np.clip(np.asarray(a, dtype=float), -1.0, 1.0)
        pos = tape.matmul(s, self._POS)
        vel2 = tape.clip(tape.matmul(s, self._VEL) + p.action_gain * a * p.dt, p.max_speed)
        return tape.concat([pos + vel2 * p.dt, vel2], axis=-1)

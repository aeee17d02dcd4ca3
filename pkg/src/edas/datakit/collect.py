"""Scripted PD data collection."""

from dataclasses import asdict, dataclass

import numpy as np

from .. import envsim
from ..exceptions import InvalidArgument
from .dataset import Dataset


@dataclass(frozen=True)
class ScriptedControllerParams:
    kp: float = 3.0
    kd: float = 3.0
    horizon: int = 100
    action_low: float = -1.0
    action_high: float = 1.0
    # exploration noise; keeps (s, a) off the closed-loop manifold
    action_noise: float = 0.5

    def __post_init__(self):
        if self.kp < 0 or self.kd < 0:
            raise InvalidArgument("controller gains must be >= 0")
        if self.action_noise < 0:
            raise InvalidArgument("action_noise must be >= 0")
        if self.horizon < 1:
            raise InvalidArgument("horizon must be >= 1")


# Gains tuned once per task against the simulator.  The arm needs less
# damping to reach its goals within the horizon.
_TASK_GAINS = {envsim.POINT_MASS: {}, envsim.REACHER: {"kd": 1.0}}


def default_controller(kind, **overrides):
    """Controller parameters for task ``kind``; ``None`` overrides are ignored."""
    if kind not in _TASK_GAINS:
        raise InvalidArgument(f"unknown environment {kind!r}")
    kw = {**_TASK_GAINS[kind], **{k: v for k, v in overrides.items() if v is not None}}
    return ScriptedControllerParams(**kw)


def pd_controller_action(s, g, params=ScriptedControllerParams(), env=None):
    """Saturated PD law ``clip(kp * (g - pos) - kd * vel)``; works on batches."""
    s = np.asarray(s, dtype=float)
    dims = list(env.goal_dims) if env is not None else [0, 1]
    pos, vel = s[..., dims], s[..., 2:4]
    a = params.kp * (np.asarray(g, dtype=float) - pos) - params.kd * vel
    return np.clip(a, params.action_low, params.action_high)


def collect_dataset(env, controller, n_traj, goal_source, rng, noise=None,
                    tolerance=0.1, seed=None):
    """Roll out the noisy PD controller from random starts toward sampled goals.

    Each trajectory ends at the first step whose next state is within
    ``tolerance`` of its goal (done=1) or at the horizon (done=1, r=0).
    A :class:`~edas.envsim.NoiseRegion` perturbs the simulated next state,
    so the logged trajectory follows the noisy dynamics.

    All trajectories advance together as one batch; row order in the
    returned dataset is trajectory-major.
    """
    if n_traj < 1:
        raise InvalidArgument("n_traj must be >= 1")
    goals = np.array([g.goal for g in envsim.sample_goals(env, goal_source, n_traj, rng, tolerance)])
    state = envsim.sample_initial_state(env, rng, n_traj)
    alive = np.ones(n_traj, dtype=bool)
    steps = []
    for t in range(controller.horizon):
        a = pd_controller_action(state, goals, controller, env)
        if controller.action_noise > 0:
            a = np.clip(a + controller.action_noise * rng.standard_normal(a.shape),
                        controller.action_low, controller.action_high)
        nxt = env.step(state, a)
        if noise is not None:
            nxt = envsim.apply_region_noise(nxt, noise, rng, state=state)
        r = envsim.goal_reward(nxt, goals, env, tolerance)
        done = (r > 0) | (t == controller.horizon - 1)
        idx = np.flatnonzero(alive)
        steps.append((idx, t, state[idx], a[idx], r[idx], nxt[idx], done[idx]))
        alive &= ~done
        state = nxt
        if not alive.any():
            break

    traj = np.concatenate([s[0] for s in steps])
    tt = np.concatenate([np.full(len(s[0]), s[1]) for s in steps])
    order = np.lexsort((tt, traj))
    cat = lambda k: np.concatenate([s[k] for s in steps])[order]
    meta = {"seed": seed, "n_traj": n_traj, "goal_source": goal_source,
            "controller": asdict(controller)}
    if noise is not None:
        meta["noise"] = asdict(noise)
    return Dataset(
        env=env.kind, s=cat(2), a=cat(3), r=cat(4), s2=cat(5),
        g=goals[traj[order]], done=cat(6).astype(bool),
        traj=traj[order].astype(np.int64), t=tt[order].astype(np.int64),
        origin=np.zeros(len(order), dtype=np.int64), meta=meta)

"""Hand-designed dataset transforms: HER relabeling, trajectory translation,
and terminal-state (goal) distribution statistics."""

import numpy as np

from .. import envsim
from ..exceptions import InvalidArgument
from .dataset import ORIGINS


def recompute_rewards(d, tolerance=0.1):
    env = envsim.make_env(d.env)
    return envsim.goal_reward(d.s2, d.g, env, tolerance)


def rewards_consistent(d, tolerance=0.1):
    """Fraction of transitions whose stored reward matches a fresh evaluation."""
    if len(d) == 0:
        return 1.0
    return float(np.mean(recompute_rewards(d, tolerance) == d.r))


def relabel_hindsight(d, rng=None, tolerance=0.1):
    """Relabel every transition with its trajectory's final achieved goal.

    ``rng`` is accepted for interface symmetry; the final-state strategy is
    deterministic.
    """
    env = envsim.make_env(d.env)
    g = d.g.copy()
    for _, rows in d.trajectories():
        g[rows] = env.achieved(d.s2[rows[-1]])
    out = d.replace(g=g, origin=np.full(len(d), ORIGINS.index("relabeled")))
    return out.replace(r=envsim.goal_reward(out.s2, out.g, env, tolerance))


def translate_trajectories(d, mode, shift_range=None, rng=None, mask=None):
    """Shift whole trajectories along the env's translation mask.

    ``subtract_start`` moves each trajectory so its first state sits at the
    origin in the masked coordinates; ``random_shift`` adds one offset per
    trajectory drawn from ``U[low, high]`` (``shift_range = (low, high)``,
    scalars or per-masked-dim vectors).  Goals move with the states and
    stored rewards are kept.
    """
    env = envsim.make_env(d.env)
    mask = list(env.translation_mask if mask is None else mask)
    goal_slots = [env.goal_dims.index(m) for m in mask]
    offsets = {}
    trajs = list(d.trajectories())
    if mode == "subtract_start":
        for tid, rows in trajs:
            offsets[tid] = -d.s[rows[0], mask]
    elif mode == "random_shift":
        if shift_range is None:
            raise InvalidArgument("random_shift needs a shift_range")
        if rng is None:
            raise InvalidArgument("random_shift needs an rng")
        low = np.broadcast_to(np.asarray(shift_range[0], dtype=float), (len(mask),))
        high = np.broadcast_to(np.asarray(shift_range[1], dtype=float), (len(mask),))
        if np.any(low > high):
            raise InvalidArgument("shift_range low exceeds high")
        for tid, _ in trajs:
            offsets[tid] = low + rng.random(len(mask)) * (high - low)
    else:
        raise InvalidArgument(f"unknown translation mode {mode!r}")

    s, s2, g = d.s.copy(), d.s2.copy(), d.g.copy()
    for tid, rows in trajs:
        u = offsets[tid]
        s[np.ix_(rows, mask)] += u
        s2[np.ix_(rows, mask)] += u
        g[np.ix_(rows, goal_slots)] += u
    return d.replace(s=s, s2=s2, g=g)


def terminal_positions(d):
    env = envsim.make_env(d.env)
    return env.achieved(d.s2[d.final_rows()])


def goal_histogram(d, bins=9, extent=None):
    """2-D histogram of trajectory-final achieved positions.

    Returns ``(counts, xedges, yedges, entropy)`` where ``entropy`` is the
    Shannon entropy (nats) of the normalized counts.  The default extent is
    the arena ``[-1, 1]^2``; an odd bin count keeps the origin in the middle
    of a cell.
    """
    if bins < 1:
        raise InvalidArgument("bins must be >= 1")
    pts = terminal_positions(d)
    if extent is None:
        extent = (-1.0, 1.0)
    lo, hi = extent
    counts, xe, ye = np.histogram2d(pts[:, 0], pts[:, 1], bins=bins,
                                    range=[[lo, hi], [lo, hi]])
    return counts, xe, ye, histogram_entropy(counts)


def histogram_entropy(counts):
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())

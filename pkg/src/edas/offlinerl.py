"""Goal-conditioned offline RL: critic-regularized regression (CRR) with an
exponential advantage weight, a behavior-cloning baseline, and evaluation
on train/test goal splits.

The policy is a fixed-std Gaussian whose mean is ``tanh(net([s, g]))``.
The same squashed mean is used in the training density and at evaluation,
so what is fitted is what is run.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import envsim
from .diffcore import Tape, adam, from_dict, mlp_forward, mlp_init, mse, opt_step, to_dict
from .exceptions import InvalidArgument, NumericalFailure, SchemaError

_LOG_2PI = math.log(2.0 * math.pi)


# -- networks ----------------------------------------------------------------

@dataclass
class GaussianPolicy:
    net: object
    log_std: float = math.log(0.1)

    def __post_init__(self):
        if not np.isfinite(self.log_std):
            raise InvalidArgument("log_std must be finite")

    @property
    def std(self):
        return math.exp(self.log_std)

    @property
    def adim(self):
        return self.net.output_dim

    def mean(self, s, g):
        return np.tanh(mlp_forward(self.net, _cat(s, g)))

    def act(self, s, g):
        """Deterministic evaluation action."""
        return self.mean(s, g)

    def sample(self, s, g, rng, n=1):
        """``n`` actions per row, clipped to the action box; shape (n, batch, adim)."""
        mu = self.mean(s, g)
        eps = rng.standard_normal((n,) + mu.shape)
        return np.clip(mu + self.std * eps, -1.0, 1.0)

    def log_prob_on_tape(self, tape, s, g, a):
        """Per-row Gaussian log-density of ``a``; the network is trainable."""
        mu = tape.tanh(mlp_forward(self.net, _cat(s, g), tape))
        z = (mu - np.asarray(a, dtype=float)) * (1.0 / self.std)
        quad = tape.square(z).sum(axis=1)
        return quad * -0.5 - self.adim * (self.log_std + 0.5 * _LOG_2PI)

    def log_prob(self, s, g, a):
        z = (self.mean(s, g) - a) / self.std
        return -0.5 * np.sum(z * z, axis=-1) - self.adim * (self.log_std + 0.5 * _LOG_2PI)

    def copy(self):
        return GaussianPolicy(self.net.copy(), self.log_std)

    def to_dict(self):
        return {"log_std": self.log_std, "net": to_dict(self.net)}

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(from_dict(doc["net"]), float(doc["log_std"]))
        except KeyError as exc:
            raise SchemaError(f"policy document missing {exc}") from exc

    def save(self, path):
        _dump(self.to_dict(), path)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class QCritic:
    net: object
    target: object = None

    def __post_init__(self):
        if self.target is None:
            self.target = self.net.copy()

    def q(self, s, a, g):
        return mlp_forward(self.net, _cat(s, a, g))[..., 0]

    def q_target(self, s, a, g):
        return mlp_forward(self.target, _cat(s, a, g))[..., 0]

    def q_on_tape(self, tape, s, a, g):
        return mlp_forward(self.net, _cat(s, a, g), tape)

    def refresh_target(self):
        self.target = self.net.copy()

    def to_dict(self):
        return {"net": to_dict(self.net), "target": to_dict(self.target)}

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(from_dict(doc["net"]), from_dict(doc["target"]))
        except KeyError as exc:
            raise SchemaError(f"critic document missing {exc}") from exc

    def save(self, path):
        _dump(self.to_dict(), path)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _cat(*parts):
    parts = [np.asarray(p, dtype=float) for p in parts]
    if parts[0].ndim == 1:
        return np.concatenate(parts)[None, :]
    # broadcast leading axes (sampled actions carry an extra one)
    lead = np.broadcast_shapes(*(p.shape[:-1] for p in parts))
    parts = [np.broadcast_to(p, lead + p.shape[-1:]) for p in parts]
    out = np.concatenate(parts, axis=-1)
    return out.reshape(-1, out.shape[-1]) if out.ndim > 2 else out


def _dump(doc, path):
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def make_policy(sdim, gdim, adim, hidden=(64, 64), seed=0, log_std=math.log(0.1)):
    return GaussianPolicy(mlp_init(sdim + gdim, list(hidden), adim, seed=seed), log_std)


def make_critic(sdim, adim, gdim, hidden=(64, 64), seed=0):
    return QCritic(mlp_init(sdim + adim + gdim, list(hidden), 1, seed=seed))


# -- CRR core ----------------------------------------------------------------

@dataclass
class CrrConfig:
    gamma: float = 0.99
    beta: float = 1.0
    m: int = 4
    weight_clip: float = 20.0
    policy_lr: float = 1e-3
    critic_lr: float = 1e-3
    batch_size: int = 256
    steps: int = 50_000
    target_period: int = 100
    hidden: tuple = (64, 64)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise InvalidArgument("gamma must lie in (0, 1)")
        if not self.beta > 0:
            raise InvalidArgument("beta must be positive")
        if self.m < 1 or self.batch_size < 1 or self.target_period < 1 or self.steps < 0:
            raise InvalidArgument("m, batch_size and target_period must be >= 1, steps >= 0")


def td_target(r, done, q_next, gamma):
    r, done = np.asarray(r, dtype=float), np.asarray(done, dtype=float)
    return r + gamma * (1.0 - done) * np.asarray(q_next, dtype=float)


def advantage(critic, s, a, g, policy, m, rng):
    """``Q(s, a, g)`` minus the mean Q over ``m`` policy samples."""
    if m < 1:
        raise InvalidArgument("m must be >= 1")
    q = critic.q(s, a, g)
    samples = policy.sample(s, g, rng, m)
    baseline = critic.q(s, samples, g).reshape((m,) + np.shape(q)).mean(axis=0)
    return q - baseline


def crr_weights(adv, beta, clip=None):
    """``min(exp(A / beta), clip)``; ``beta=inf`` gives unit weights."""
    w = np.exp(np.asarray(adv, dtype=float) / beta)
    return np.minimum(w, clip) if clip is not None else w


def policy_loss_on_tape(policy, batch, weights, tape):
    s, a, g = batch["s"], batch["a"], batch["g"]
    logp = policy.log_prob_on_tape(tape, s, g, a)
    return (logp * np.asarray(weights, dtype=float)).mean() * -1.0


def critic_loss_on_tape(critic, policy, batch, gamma, tape):
    q_next = critic.q_target(batch["s2"], policy.act(batch["s2"], batch["g"]), batch["g"])
    y = td_target(batch["r"], batch["done"], q_next, gamma)[:, None]
    return mse(critic.q_on_tape(tape, batch["s"], batch["a"], batch["g"]), y)


@dataclass
class CrrState:
    """Optimizer state carried across :func:`crr_update` calls."""
    policy_opt: object
    critic_opt: object
    step: int = 0


def init_state(cfg):
    return CrrState(adam(cfg.policy_lr), adam(cfg.critic_lr))


def crr_update(policy, critic, batch, cfg, rng, state, unit_weights=False):
    """One critic step then one policy step; returns a diagnostics dict."""
    tape = Tape()
    c_loss = critic_loss_on_tape(critic, policy, batch, cfg.gamma, tape)
    c_params = critic.net.parameters()
    c_grads = tape.gradient(c_loss, c_params)

    if unit_weights:
        w = np.ones(len(batch["s"]))
    else:
        adv = advantage(critic, batch["s"], batch["a"], batch["g"], policy, cfg.m, rng)
        w = crr_weights(adv, cfg.beta, cfg.weight_clip)
    tape = Tape()
    p_loss = policy_loss_on_tape(policy, batch, w, tape)
    p_params = policy.net.parameters()
    p_grads = tape.gradient(p_loss, p_params)

    cl, pl = float(c_loss.value), float(p_loss.value)
    if not (np.isfinite(cl) and np.isfinite(pl)):
        raise NumericalFailure("non-finite CRR loss", state.step)
    opt_step(c_params, c_grads, state.critic_opt)
    opt_step(p_params, p_grads, state.policy_opt)
    state.step += 1
    if state.step % cfg.target_period == 0:
        critic.refresh_target()
    return {"critic_loss": cl, "policy_loss": pl, "mean_weight": float(np.mean(w))}


def _columns(d):
    return {"s": d.s, "a": d.a, "g": d.g, "s2": d.s2, "r": d.r, "done": d.done.astype(float)}


def _take(cols, idx):
    return {k: v[idx] for k, v in cols.items()}


def train_crr(d, cfg=None, log_every=0):
    """Train policy and critic on dataset ``d``; returns ``(policy, critic, log)``.

    ``log`` holds ``(step, critic_loss, policy_loss, mean_weight)`` rows every
    ``log_every`` steps (none when 0).
    """
    return _train(d, cfg or CrrConfig(), unit_weights=False, log_every=log_every)


def train_bc(d, cfg=None, log_every=0):
    """Behavior cloning: the CRR policy step with every weight fixed to one."""
    policy, _, log = _train(d, cfg or CrrConfig(), unit_weights=True, log_every=log_every)
    return policy


def _train(d, cfg, unit_weights, log_every):
    if len(d) == 0:
        raise InvalidArgument("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    p_seed, c_seed = (int(x) for x in rng.integers(2 ** 31, size=2))
    policy = make_policy(d.sdim, d.gdim, d.adim, cfg.hidden, p_seed)
    critic = make_critic(d.sdim, d.adim, d.gdim, cfg.hidden, c_seed)
    cols = _columns(d)
    state = init_state(cfg)
    log = []
    n = len(d)
    for k in range(cfg.steps):
        idx = rng.integers(0, n, size=min(cfg.batch_size, n))
        if unit_weights:
            diag = _bc_step(policy, _take(cols, idx), state)
        else:
            diag = crr_update(policy, critic, _take(cols, idx), cfg, rng, state)
        if log_every and (k + 1) % log_every == 0:
            log.append((k + 1, diag["critic_loss"], diag["policy_loss"], diag["mean_weight"]))
    return policy, critic, log


def _bc_step(policy, batch, state):
    tape = Tape()
    loss = policy_loss_on_tape(policy, batch, np.ones(len(batch["s"])), tape)
    params = policy.net.parameters()
    grads = tape.gradient(loss, params)
    value = float(loss.value)
    if not np.isfinite(value):
        raise NumericalFailure("non-finite behavior-cloning loss", state.step)
    opt_step(params, grads, state.policy_opt)
    state.step += 1
    return {"critic_loss": float("nan"), "policy_loss": value, "mean_weight": 1.0}


# -- evaluation --------------------------------------------------------------

def rollout(env, policy, goal, horizon=100, rng=None, start=None, tolerance=0.1):
    """Run the deterministic policy for ``horizon`` steps (no early stop).

    Returns ``(normalized_return, states)`` with ``states`` of length
    ``horizon + 1``.
    """
    if horizon < 1:
        raise InvalidArgument("horizon must be >= 1")
    if start is None:
        if rng is None:
            raise InvalidArgument("need a start state or an rng")
        start = envsim.sample_initial_state(env, rng)
    ret, states = _rollout_batch(env, policy, np.atleast_2d(goal), np.atleast_2d(start),
                                 horizon, tolerance)
    return float(ret[0]), states[:, 0]


def _rollout_batch(env, policy, goals, starts, horizon, tolerance):
    s = np.array(starts, dtype=float)
    total = np.zeros(len(s))
    states = [s]
    for _ in range(horizon):
        s = env.step(s, policy.act(s, goals))
        total += envsim.goal_reward(s, goals, env, tolerance)
        states.append(s)
    return total / horizon, np.stack(states)


@dataclass
class EvalReport:
    returns: dict = field(default_factory=dict)  # split -> list of returns
    horizon: int = 100

    def mean(self, split):
        return float(np.mean(self.returns[split]))

    def stderr(self, split):
        r = np.asarray(self.returns[split], dtype=float)
        return float(r.std(ddof=1) / np.sqrt(len(r))) if len(r) > 1 else 0.0

    def episodes(self, split):
        return len(self.returns[split])

    def rows(self):
        for split, rets in self.returns.items():
            for i, r in enumerate(rets):
                yield split, i, r

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["split", "episode", "return"])
            for split, i, r in self.rows():
                w.writerow([split, i, repr(float(r))])


def evaluate_policy(env, policy, splits=("train", "test"), episodes=100, seed=0,
                    horizon=100, tolerance=0.1):
    """Evaluate on each goal split with independent per-episode seeds.

    Episode ``i`` of split ``k`` draws its start state and goal from
    ``SeedSequence([seed, k, i])``, so any episode can be replayed alone.
    Episodes are run as one batch per split.
    """
    if not splits:
        raise InvalidArgument("need at least one goal split")
    if episodes < 1:
        raise InvalidArgument("episodes must be >= 1")
    report = EvalReport(horizon=horizon)
    for k, split in enumerate(splits):
        starts, goals = [], []
        for i in range(episodes):
            rng = np.random.default_rng(np.random.SeedSequence([seed, k, i]))
            starts.append(envsim.sample_initial_state(env, rng))
            goals.append(envsim.sample_goals(env, split, 1, rng, tolerance)[0].vector)
        ret, _ = _rollout_batch(env, policy, np.array(goals), np.array(starts), horizon, tolerance)
        report.returns[split] = [float(x) for x in ret]
    return report


# -- estimator wrappers ------------------------------------------------------

class CrrAgent(BaseEstimator):
    """Estimator face over :func:`train_crr`.

    ``fit`` takes a dataset; ``predict`` maps ``X = [s, g]`` rows to
    deterministic actions.  ``behavior_cloning=True`` trains the baseline.
    """

    def __init__(self, gamma=0.99, beta=1.0, m=4, weight_clip=20.0, policy_lr=1e-3,
                 critic_lr=1e-3, batch_size=256, steps=50_000, target_period=100,
                 hidden=(64, 64), behavior_cloning=False, random_state=0):
        self.gamma = gamma
        self.beta = beta
        self.m = m
        self.weight_clip = weight_clip
        self.policy_lr = policy_lr
        self.critic_lr = critic_lr
        self.batch_size = batch_size
        self.steps = steps
        self.target_period = target_period
        self.hidden = hidden
        self.behavior_cloning = behavior_cloning
        self.random_state = random_state

    def config(self):
        p = self.get_params()
        return CrrConfig(**{k: p[k] for k in ("gamma", "beta", "m", "weight_clip", "policy_lr",
                                                 "critic_lr", "batch_size", "steps",
                                                 "target_period", "hidden")},
                         seed=self.random_state)

    def fit(self, d, y=None):
        cfg = self.config()
        if self.behavior_cloning:
            self.policy_, self.critic_ = train_bc(d, cfg), None
        else:
            self.policy_, self.critic_, _ = train_crr(d, cfg)
        self.sdim_ = d.sdim
        return self

    def predict(self, X):
        check_is_fitted(self, "policy_")
        X = np.asarray(X, dtype=float)
        return self.policy_.act(X[:, :self.sdim_], X[:, self.sdim_:])

    def evaluate(self, env, **kw):
        check_is_fitted(self, "policy_")
        return evaluate_policy(env, self.policy_, **kw)

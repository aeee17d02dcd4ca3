"""Learning per-dimension translation bounds under which a dynamics model
stays equivariant, and augmenting a dataset with the learned translations.

The offset distribution is a product of uniforms ``U[low_d, high_d]``.
Offsets are drawn by reparameterization, ``u = low + eps * (high - low)``,
so the equivariance error is differentiable in the bounds.  Two objectives
are available:

* ``"v1"``: ``L_eq - lambda_e * H + lambda_v * R_val``
* ``"v2"``: ``H * (L_eq - L_dyn - lambda_e) + lambda_v * R_val``, which only
  grows the bounds while translated predictions are no worse than
  untranslated ones by more than the margin ``lambda_e``.

``H`` is the (floored) differential entropy of the box and ``R_val``
penalizes inverted bounds.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import envsim
from .datakit.dataset import ORIGINS, Dataset
from .diffcore import Tape, adam, mse, opt_step
from .exceptions import InvalidArgument, NumericalFailure

V1_LAMBDA_E = 1e-5
V2_LAMBDA_E = 0.01


@dataclass
class TranslationBounds:
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        self.low = np.array(self.low, dtype=float)
        self.high = np.array(self.high, dtype=float)
        if self.low.shape != self.high.shape or self.low.ndim != 1:
            raise InvalidArgument("low and high must be equal-length vectors")

    @classmethod
    def centered(cls, dim, width):
        return cls(np.full(dim, -width / 2), np.full(dim, width / 2))

    @property
    def width(self):
        return self.high - self.low

    def is_valid(self, tol=1e-6):
        return bool(np.all(self.low <= self.high + tol))

    def to_dict(self):
        return {"low": self.low.tolist(), "high": self.high.tolist()}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["low"], doc["high"])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class BoundsTrace:
    low: list = field(default_factory=list)
    high: list = field(default_factory=list)
    loss_eq: list = field(default_factory=list)
    r_ent: list = field(default_factory=list)
    r_val: list = field(default_factory=list)
    loss_dyn: list = field(default_factory=list)

    def __len__(self):
        return len(self.loss_eq)

    def widths(self):
        return np.asarray(self.high) - np.asarray(self.low)

    def record(self, bounds, loss_eq, r_ent, r_val, loss_dyn):
        self.low.append(bounds.low.copy())
        self.high.append(bounds.high.copy())
        self.loss_eq.append(float(loss_eq))
        self.r_ent.append(float(r_ent))
        self.r_val.append(float(r_val))
        self.loss_dyn.append(float(loss_dyn))

    def write_csv(self, path):
        dim = len(self.low[0]) if self.low else 0
        header = (["iter", "loss_eq", "r_ent", "r_val", "loss_dyn"]
                  + [f"low_{d}" for d in range(dim)] + [f"high_{d}" for d in range(dim)])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(len(self)):
                w.writerow([k, repr(self.loss_eq[k]), repr(self.r_ent[k]), repr(self.r_val[k]),
                            repr(self.loss_dyn[k])]
                           + [repr(float(x)) for x in self.low[k]]
                           + [repr(float(x)) for x in self.high[k]])


# -- loss terms --------------------------------------------------------------

def sample_offsets(bounds, n, rng, tape=None, eps=None):
    """``n`` offsets from ``U[low, high]``; a tape node when ``tape`` is given.

    Pass ``eps`` (shape ``(n, dim)``, entries in [0, 1]) to freeze the noise.
    """
    if n < 1:
        raise InvalidArgument("need at least one offset")
    dim = len(bounds.low)
    if eps is None:
        eps = rng.random((n, dim))
    if tape is None:
        return bounds.low + eps * (bounds.high - bounds.low)
    low, high = tape.param(bounds.low), tape.param(bounds.high)
    return low + tape.mul(eps, high - low)


def apply_translation(x, u):
    x, u = np.asarray(x, dtype=float), np.asarray(u, dtype=float)
    if x.shape[-1] != u.shape[-1]:
        raise InvalidArgument(f"cannot translate length {x.shape[-1]} by length {u.shape[-1]}")
    return x + u


def entropy_reg(bounds, floor=1e-6, tape=None):
    """Sum of log widths, each width floored at ``floor``."""
    if tape is None:
        return float(np.sum(np.log(np.maximum(bounds.width, floor))))
    low, high = tape.param(bounds.low), tape.param(bounds.high)
    width = high - low
    floored = tape.relu(width - floor) + floor  # max(width, floor)
    return tape.log(floored).sum()


def validity_reg(bounds, tape=None):
    if tape is None:
        return float(np.sum(np.maximum(bounds.low - bounds.high, 0.0)))
    low, high = tape.param(bounds.low), tape.param(bounds.high)
    return tape.relu(low - high).sum()


def equivariance_loss(model, s, a, s2, u, tape=None):
    """Mean squared error between ``f(s + u, a)`` and ``s2 + u``.

    ``u`` has one row per offset; with ``k * len(s)`` rows each sample is
    paired with ``k`` consecutive offsets.
    """
    s, a, s2 = (np.asarray(x, dtype=float) for x in (s, a, s2))
    n = len(s)
    rows = u.shape[0]
    if n == 0 or rows % n:
        raise InvalidArgument(f"{rows} offsets cannot be spread over {n} samples")
    if u.shape[-1] != s.shape[-1] or s2.shape != s.shape:
        raise InvalidArgument("state, next state and offset widths must agree")
    reps = rows // n
    if reps > 1:
        s, a, s2 = (np.repeat(x, reps, axis=0) for x in (s, a, s2))
    if tape is None:
        u = np.asarray(u, dtype=float)
        return mse(model.predict_next(s + u, a), s2 + u)
    s_shift = tape.add(s, u)
    return mse(model.predict_on_tape(tape, s_shift, a), tape.add(s2, u))


@dataclass
class LossParts:
    total: object
    loss_eq: object
    r_ent: object
    r_val: object
    loss_dyn: float


def _value(x):
    return float(x.value) if hasattr(x, "value") else float(x)


def joint_loss(model, batch, bounds, variant, lambda_e, lambda_v, rng, tape,
               offsets_per_sample=1, floor=1e-6, eps=None, include_eq=True):
    """Assemble the v1 or v2 objective on ``tape``; returns :class:`LossParts`.

    Only the bounds are differentiable; the model enters as constants.
    """
    s, a, s2 = batch
    n = len(s) * offsets_per_sample
    u = sample_offsets(bounds, n, rng, tape=tape, eps=eps)
    r_ent = entropy_reg(bounds, floor, tape)
    r_val = validity_reg(bounds, tape)
    loss_eq = equivariance_loss(model, s, a, s2, u, tape) if include_eq else tape.const(0.0)
    loss_dyn = mse(model.predict_next(s, a), s2) if include_eq else 0.0
    if variant == "v1":
        total = loss_eq - lambda_e * r_ent + lambda_v * r_val
    elif variant == "v2":
        total = r_ent * (loss_eq - loss_dyn - lambda_e) + lambda_v * r_val
    else:
        raise InvalidArgument(f"unknown loss variant {variant!r}")
    return LossParts(total, loss_eq, r_ent, r_val, loss_dyn)


def _lambda_e(cfg, variant):
    lam = getattr(cfg, "lambda_e", None)
    if lam is None:
        return V1_LAMBDA_E if variant == "v1" else V2_LAMBDA_E
    return lam


def joint_loss_v1(model, batch, bounds, cfg, rng, tape, eps=None):
    return joint_loss(model, batch, bounds, "v1", _lambda_e(cfg, "v1"), cfg.lambda_v, rng, tape,
                      cfg.offsets_per_sample, cfg.entropy_floor, eps).total


def joint_loss_v2(model, batch, bounds, cfg, rng, tape, eps=None):
    return joint_loss(model, batch, bounds, "v2", _lambda_e(cfg, "v2"), cfg.lambda_v, rng, tape,
                      cfg.offsets_per_sample, cfg.entropy_floor, eps).total


# -- estimator ---------------------------------------------------------------

class EquivariantBoundsLearner(TransformerMixin, BaseEstimator):
    """Learn translation bounds for a fitted dynamics ``model``.

    ``fit`` takes ``X = [s, a]`` rows and next states ``y``; ``transform``
    maps a :class:`~edas.datakit.Dataset` to its augmented copy
    (``n_passes`` translated passes, originals not included).

    ``lambda_e=None`` picks the variant's default (entropy weight for v1,
    accuracy margin for v2).
    """

    def __init__(self, model=None, variant="v1", lambda_e=None, lambda_v=10.0,
                 learning_rate=1e-2, n_iter=2000, batch_size=256, offsets_per_sample=4,
                 entropy_floor=1e-6, init_width=0.1, include_eq=True, n_passes=10,
                 random_state=0):
        self.model = model
        self.variant = variant
        self.lambda_e = lambda_e
        self.lambda_v = lambda_v
        self.learning_rate = learning_rate
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.offsets_per_sample = offsets_per_sample
        self.entropy_floor = entropy_floor
        self.init_width = init_width
        self.include_eq = include_eq
        self.n_passes = n_passes
        self.random_state = random_state

    @property
    def lambda_e_(self):
        if self.lambda_e is not None:
            return self.lambda_e
        return V1_LAMBDA_E if self.variant == "v1" else V2_LAMBDA_E

    def _check_config(self):
        if self.variant not in ("v1", "v2"):
            raise InvalidArgument(f"unknown loss variant {self.variant!r}")
        if self.n_iter < 1 or self.batch_size < 1 or self.offsets_per_sample < 1:
            raise InvalidArgument("n_iter, batch_size and offsets_per_sample must be >= 1")
        if not self.lambda_v > 0 or not self.entropy_floor > 0:
            raise InvalidArgument("lambda_v and entropy_floor must be positive")

    def fit(self, X, y=None, init_bounds=None):
        self._check_config()
        if self.include_eq and self.model is None:
            raise InvalidArgument("a fitted dynamics model is required")
        y = np.asarray(y, dtype=float)
        X = np.asarray(X, dtype=float)
        sdim = y.shape[1]
        s, a, s2 = X[:, :sdim], X[:, sdim:], y
        if len(s) == 0:
            raise InvalidArgument("cannot learn bounds from an empty dataset")
        rng = np.random.default_rng(self.random_state)
        bounds = init_bounds or TranslationBounds.centered(sdim, self.init_width)
        bounds = TranslationBounds(bounds.low.copy(), bounds.high.copy())
        opt = adam(self.learning_rate)
        trace = BoundsTrace()
        lam = self.lambda_e_
        for k in range(self.n_iter):
            idx = rng.integers(0, len(s), size=min(self.batch_size, len(s)))
            tape = Tape()
            parts = joint_loss(self.model, (s[idx], a[idx], s2[idx]), bounds, self.variant,
                               lam, self.lambda_v, rng, tape, self.offsets_per_sample,
                               self.entropy_floor, include_eq=self.include_eq)
            total = _value(parts.total)
            if not np.isfinite(total):
                raise NumericalFailure("non-finite bounds loss", f"iteration {k}")
            trace.record(bounds, _value(parts.loss_eq), _value(parts.r_ent),
                         _value(parts.r_val), parts.loss_dyn)
            grads = tape.gradient(parts.total, [bounds.low, bounds.high])
            opt_step([bounds.low, bounds.high], grads, opt)
        self.bounds_ = bounds
        self.trace_ = trace
        self.n_features_in_ = X.shape[1]
        return self

    def fit_dataset(self, d):
        return self.fit(np.hstack([d.s, d.a]), d.s2)

    def transform(self, d):
        check_is_fitted(self, "bounds_")
        return augment_dataset(d, self.bounds_, AugmentConfig(self.n_passes, self.random_state))

    def fit_transform(self, d, y=None):
        return self.fit_dataset(d).transform(d)


def learn_bounds(model, d, cfg=None):
    """Fit bounds on dataset ``d``; returns ``(bounds, trace)``."""
    learner = cfg if cfg is not None else EquivariantBoundsLearner()
    learner.set_params(model=model)
    learner.fit_dataset(d)
    return learner.bounds_, learner.trace_


def entropy_only_ablation(cfg=None, sdim=4, init_bounds=None):
    """Run the bound optimizer with the equivariance term removed."""
    learner = cfg if cfg is not None else EquivariantBoundsLearner()
    learner = learner.__class__(**{**learner.get_params(), "include_eq": False, "model": None})
    X = np.zeros((1, sdim + 1))
    learner.fit(X, np.zeros((1, sdim)), init_bounds=init_bounds)
    return learner.trace_


# -- augmentation ------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    passes: int = 10
    seed: int = 0
    per: str = "transition"  # or "trajectory"

    def __post_init__(self):
        if self.passes < 1:
            raise InvalidArgument("need at least one augmentation pass")
        if self.per not in ("transition", "trajectory"):
            raise InvalidArgument(f"unknown offset granularity {self.per!r}")


def augment_dataset(d, bounds, cfg=AugmentConfig()):
    """``passes`` translated copies of ``d`` (the new data only).

    Each copy draws one offset per transition (or per trajectory) and moves
    ``s``, ``s2`` and the goal by it; the goal takes the offset entries of
    the goal-relevant state coordinates.  Rewards and done flags are copied.
    """
    if not bounds.is_valid(tol=0.0):
        raise InvalidArgument("cannot augment with inverted bounds")
    if len(bounds.low) != d.sdim:
        raise InvalidArgument("bounds width does not match the state dimension")
    env = envsim.make_env(d.env)
    goal_dims = list(env.goal_dims)
    rng = np.random.default_rng(cfg.seed)
    stride = int(d.traj.max()) + 1 if len(d) else 1
    parts = []
    for k in range(cfg.passes):
        if cfg.per == "transition":
            u = sample_offsets(bounds, max(len(d), 1), rng)[:len(d)]
        else:
            ids, inverse = np.unique(d.traj, return_inverse=True)
            u = sample_offsets(bounds, max(len(ids), 1), rng)[inverse]
        parts.append(d.replace(
            s=d.s + u, s2=d.s2 + u, g=d.g + u[:, goal_dims],
            traj=d.traj + (k + 1) * stride,
            origin=np.full(len(d), ORIGINS.index("augmented"))))
    cols = ("s", "a", "r", "s2", "g", "done", "traj", "t", "origin")
    merged = {c: np.concatenate([getattr(p, c) for p in parts]) for c in cols}
    meta = dict(d.meta, augment={"passes": cfg.passes, "seed": cfg.seed, "per": cfg.per,
                                 "bounds": bounds.to_dict()})
    return Dataset(d.env, meta=meta, **merged)

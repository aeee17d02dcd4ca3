"""One-step dynamics model ``f(s, a) -> s'`` as a scikit-learn regressor."""

import json
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .diffcore import Tape, adam, from_dict, mlp_forward, mlp_init, mse, opt_step, to_dict
from .exceptions import InvalidArgument, NumericalFailure


@dataclass
class TrainReport:
    epoch_loss: list = field(default_factory=list)
    val_loss: float = float("nan")
    seconds: float = 0.0


class DynamicsModel(RegressorMixin, BaseEstimator):
    """MLP dynamics model trained by minibatch Adam on squared one-step error.

    ``X`` rows are ``[s, a]`` and targets are next states; the state width is
    taken from the targets.  With ``predict_delta`` the network outputs
    ``s' - s`` and :meth:`predict` adds ``s`` back.
    """

    def __init__(self, hidden_dims=(64, 64), learning_rate=1e-3, batch_size=256,
                 epochs=200, validation_fraction=0.1, predict_delta=True, weight_decay=0.3,
                 random_state=0):
        self.hidden_dims = hidden_dims
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.validation_fraction = validation_fraction
        self.predict_delta = predict_delta
        self.weight_decay = weight_decay
        self.random_state = random_state

    def _validate_params(self):
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1")
        if not 0 <= self.validation_fraction < 1:
            raise InvalidArgument("validation_fraction must lie in [0, 1)")

    def fit(self, X, y):
        self._validate_params()
        X, y = check_X_y(X, y, multi_output=True, dtype=float)
        y = y.reshape(len(y), -1)
        sdim = y.shape[1]
        if X.shape[1] <= sdim:
            raise InvalidArgument("X must hold state and action columns")
        self.sdim_, self.adim_ = sdim, X.shape[1] - sdim
        self.n_features_in_ = X.shape[1]
        rng = np.random.default_rng(self.random_state)
        seed = int(rng.integers(2 ** 31))
        self.net_ = mlp_init(X.shape[1], list(self.hidden_dims), sdim, seed=seed)

        perm = rng.permutation(len(X))
        n_val = int(round(self.validation_fraction * len(X)))
        if n_val >= len(X):
            n_val = 0
        val, train = perm[:n_val], perm[n_val:]
        target = y - X[:, :sdim] if self.predict_delta else y

        t0 = time.perf_counter()
        report = TrainReport()
        opt = adam(self.learning_rate, weight_decay=self.weight_decay)
        params = self.net_.parameters()
        for epoch in range(self.epochs):
            order = rng.permutation(train)
            total = 0.0
            for start in range(0, len(order), self.batch_size):
                idx = order[start:start + self.batch_size]
                tape = Tape()
                loss = mse(mlp_forward(self.net_, X[idx], tape), target[idx])
                value = float(loss.value)
                if not np.isfinite(value):
                    raise NumericalFailure("non-finite dynamics loss", f"epoch {epoch}")
                opt_step(params, tape.gradient(loss, params), opt)
                total += value * len(idx)
            report.epoch_loss.append(total / len(order))
        if n_val:
            report.val_loss = mse(self.predict(X[val]), y[val])
        report.seconds = time.perf_counter() - t0
        self.report_ = report
        return self

    def fit_dataset(self, d):
        return self.fit(np.hstack([d.s, d.a]), d.s2)

    def predict(self, X):
        check_is_fitted(self, "net_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise InvalidArgument(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        out = mlp_forward(self.net_, X)
        return out + X[:, :self.sdim_] if self.predict_delta else out

    def predict_next(self, s, a):
        s, a = np.asarray(s, dtype=float), np.asarray(a, dtype=float)
        single = s.ndim == 1
        out = self.predict(np.hstack([np.atleast_2d(s), np.atleast_2d(a)]))
        return out[0] if single else out

    def predict_on_tape(self, tape, s, a):
        """Record a prediction whose state input may be a tape node.

        Network weights enter as constants: gradients reach the state input
        (and whatever it was built from) but never the model.
        """
        s = tape.lift(s)
        x = tape.concat([s, tape.const(a)], axis=-1)
        out = mlp_forward(self.net_, x, tape, trainable=False)
        return s + out if self.predict_delta else out

    def score_mse(self, d):
        return eval_model(self, d)

    # persistence: diffcore weight JSON plus a small sidecar

    def save(self, path, sidecar_path):
        check_is_fitted(self, "net_")
        with open(path, "w") as fh:
            json.dump(to_dict(self.net_), fh)
            fh.write("\n")
        with open(sidecar_path, "w") as fh:
            json.dump({"predict_delta": bool(self.predict_delta), "sdim": self.sdim_,
                       "adim": self.adim_, "params": _jsonable(self.get_params())},
                      fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path, sidecar_path):
        with open(sidecar_path) as fh:
            side = json.load(fh)
        params = side.get("params", {})
        if "hidden_dims" in params:
            params["hidden_dims"] = tuple(params["hidden_dims"])
        model = cls(**params)
        model.predict_delta = bool(side["predict_delta"])
        with open(path) as fh:
            model.net_ = from_dict(json.load(fh))
        model.sdim_, model.adim_ = int(side["sdim"]), int(side["adim"])
        model.n_features_in_ = model.sdim_ + model.adim_
        return model


def _jsonable(params):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}


def train_dynamics_model(d, cfg=None):
    """Fit a :class:`DynamicsModel` on a dataset; returns ``(model, report)``."""
    if len(d) == 0:
        raise InvalidArgument("cannot train on an empty dataset")
    model = cfg if cfg is not None else DynamicsModel()
    model.fit_dataset(d)
    return model, model.report_


def predict_next(model, s, a):
    return model.predict_next(s, a)


def eval_model(model, d):
    """Mean over transitions of the summed squared one-step error."""
    if len(d) == 0:
        raise InvalidArgument("cannot evaluate on an empty dataset")
    return mse(model.predict_next(d.s, d.a), d.s2)

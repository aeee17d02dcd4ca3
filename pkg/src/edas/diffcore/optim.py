"""Adam and plain gradient descent over lists of numpy arrays."""

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import InvalidArgument, NumericalFailure


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    mode: str = "adam"  # or "sgd"
    weight_decay: float = 0.0  # decoupled: p <- p - lr * wd * p
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in ("adam", "sgd"):
            raise InvalidArgument(f"unknown optimizer mode {self.mode!r}")


def adam(lr=1e-3, **kw):
    return OptimizerState(lr=lr, mode="adam", **kw)


def sgd(lr=1e-2):
    return OptimizerState(lr=lr, mode="sgd")


def opt_step(params, grads, state):
    """Update ``params`` in place and return them.

    Plain mode is ``p <- p - lr * g``.  Adam mode keeps bias-corrected first
    and second moments in ``state`` (allocated on the first call).
    """
    if len(params) != len(grads):
        raise InvalidArgument(f"{len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise InvalidArgument(f"param shape {np.shape(p)} != grad shape {np.shape(g)}")
    if state.mode == "adam" and not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    elif state.mode == "adam" and len(state.m) != len(params):
        raise InvalidArgument("optimizer state was built for a different parameter list")

    state.step += 1
    if state.weight_decay:
        for p in params:
            p -= state.lr * state.weight_decay * p
    if state.mode == "sgd":
        for p, g in zip(params, grads):
            p -= state.lr * g
    else:
        b1, b2 = state.beta1, state.beta2
        c1 = 1.0 - b1 ** state.step
        c2 = 1.0 - b2 ** state.step
        for p, g, m, v in zip(params, grads, state.m, state.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    for p in params:
        if not np.all(np.isfinite(p)):
            raise NumericalFailure("non-finite parameter after optimizer step", state.step)
    return params

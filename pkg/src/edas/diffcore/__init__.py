"""Small reverse-mode autodiff engine and MLP toolkit."""

import numpy as np

from ..exceptions import InvalidArgument
from .gradcheck import finite_diff_grad, max_relative_error
from .mlp import (Layer, MlpNetwork, from_dict, load_network, mlp_forward,
                  mlp_init, save_network, to_dict)
from .optim import OptimizerState, adam, opt_step, sgd
from .tape import Node, Tape, exp, grad_backward, log, relu, square, tanh


def mse(prediction, target):
    """Batch mean of the per-sample summed squared error.

    Works on arrays or tape nodes (either argument may be a node).
    """
    if isinstance(prediction, Node) or isinstance(target, Node):
        tape = prediction.tape if isinstance(prediction, Node) else target.tape
        p, t = tape.lift(prediction), tape.lift(target)
        if p.shape != t.shape:
            raise InvalidArgument(f"shape mismatch {p.shape} vs {t.shape}")
        if p.value.size == 0:
            raise InvalidArgument("empty batch")
        sq = tape.square(p - t)
        return sq.sum() * (1.0 / _batch_len(p.shape))
    p = np.asarray(prediction, dtype=float)
    t = np.asarray(target, dtype=float)
    if p.shape != t.shape:
        raise InvalidArgument(f"shape mismatch {p.shape} vs {t.shape}")
    if p.size == 0:
        raise InvalidArgument("empty batch")
    return float(np.sum((p - t) ** 2) / _batch_len(p.shape))


def _batch_len(shape):
    return shape[0] if len(shape) > 1 else 1


__all__ = [
    "Layer", "MlpNetwork", "Node", "OptimizerState", "Tape", "adam", "exp",
    "finite_diff_grad", "from_dict", "grad_backward", "load_network", "log",
    "max_relative_error", "mlp_forward", "mlp_init", "mse", "opt_step", "relu",
    "save_network", "sgd", "square", "tanh", "to_dict",
]

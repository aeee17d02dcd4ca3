"""Feedforward tanh networks and their JSON weight format."""

import json
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import InvalidArgument, SchemaError
from .tape import Node

ACTIVATIONS = ("tanh", "id")


@dataclass
class Layer:
    w: np.ndarray  # (fan_in, fan_out); forward is x @ w + b
    b: np.ndarray
    act: str = "tanh"


@dataclass
class MlpNetwork:
    layers: list = field(default_factory=list)

    @property
    def input_dim(self):
        return self.layers[0].w.shape[0]

    @property
    def output_dim(self):
        return self.layers[-1].w.shape[1]

    def parameters(self):
        """Flat list of weight and bias arrays, in layer order."""
        out = []
        for layer in self.layers:
            out.extend((layer.w, layer.b))
        return out

    def copy(self):
        return MlpNetwork([Layer(l.w.copy(), l.b.copy(), l.act) for l in self.layers])

    def checksum(self):
        return float(sum(np.sum(p) + np.sum(p * p) for p in self.parameters()))

    def __call__(self, x, tape=None, trainable=True):
        return mlp_forward(self, x, tape=tape, trainable=trainable)


def mlp_init(input_dim, hidden_dims, output_dim, seed=0):
    """Random network; weights ~ N(0, 1/fan_in), biases zero."""
    dims = [input_dim, *hidden_dims, output_dim]
    if any(int(d) != d or d < 1 for d in dims):
        raise InvalidArgument(f"all layer dimensions must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        w = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
        act = "id" if k == len(dims) - 2 else "tanh"
        layers.append(Layer(w, np.zeros(fan_out), act))
    return MlpNetwork(layers)


def mlp_forward(net, x, tape=None, trainable=True):
    """Evaluate ``net`` on a vector or a row batch.

    Without a tape (and with a plain array input) this is ordinary numpy.
    With a tape, or a :class:`Node` input, every layer is recorded; weights
    become shared leaves via :meth:`Tape.param` unless ``trainable`` is false.
    """
    if isinstance(x, Node):
        tape = x.tape if tape is None else tape
    if tape is None:
        x = np.asarray(x, dtype=float)
        _check_input(net, x.shape)
        h = x
        for layer in net.layers:
            h = h @ layer.w + layer.b
            if layer.act == "tanh":
                h = np.tanh(h)
        return h

    h = tape.lift(x)
    _check_input(net, h.shape)
    squeeze = h.value.ndim == 1
    if squeeze:
        h = tape.mul(np.ones((1, 1)), h)  # (n,) -> (1, n) by broadcasting
    for layer in net.layers:
        w = tape.param(layer.w) if trainable else tape.const(layer.w)
        b = tape.param(layer.b) if trainable else tape.const(layer.b)
        h = tape.matmul(h, w) + b
        if layer.act == "tanh":
            h = tape.tanh(h)
    if squeeze:
        h = h.sum(axis=0)
    return h


def _check_input(net, shape):
    if not shape or shape[-1] != net.input_dim:
        raise InvalidArgument(
            f"input has trailing dimension {shape[-1] if shape else None}, "
            f"network expects {net.input_dim}")


def to_dict(net):
    return {
        "input_dim": int(net.input_dim),
        "layers": [
            {"w": l.w.tolist(), "b": l.b.tolist(), "act": l.act}
            for l in net.layers
        ],
    }


def from_dict(doc):
    try:
        layers = [
            Layer(np.array(l["w"], dtype=float).reshape(len(l["w"]), -1),
                  np.array(l["b"], dtype=float), l["act"])
            for l in doc["layers"]
        ]
        input_dim = int(doc["input_dim"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed network document: {exc}") from exc
    if not layers:
        raise SchemaError("network has no layers")
    prev = input_dim
    for k, layer in enumerate(layers):
        if layer.act not in ACTIVATIONS:
            raise SchemaError(f"layer {k}: unknown activation {layer.act!r}")
        if layer.w.shape[0] != prev or layer.b.shape != (layer.w.shape[1],):
            raise SchemaError(f"layer {k}: dimensions do not chain")
        prev = layer.w.shape[1]
    return MlpNetwork(layers)


def save_network(net, path):
    with open(path, "w") as fh:
        json.dump(to_dict(net), fh)
        fh.write("\n")


def load_network(path):
    with open(path) as fh:
        return from_dict(json.load(fh))

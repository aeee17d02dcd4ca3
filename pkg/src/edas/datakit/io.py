"""JSON-lines dataset files.

The first line is a metadata object (env tag, dimensions, seed and any
generation metadata); every following line is one transition.  Floats are
written with ``repr`` precision so a save/load round trip is bit-exact.
"""

import json
import os

import numpy as np

from ..exceptions import ParseError, SchemaError
from .dataset import ORIGINS, Dataset

_KEYS = ("s", "a", "r", "s2", "g", "done", "traj", "t", "origin")


def save_dataset(d, path):
    header = {"env": d.env, "sdim": d.sdim, "adim": d.adim, "gdim": d.gdim,
              "seed": d.meta.get("seed")}
    header.update({k: v for k, v in d.meta.items() if k not in header})
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i in range(len(d)):
            row = {
                "s": d.s[i].tolist(), "a": d.a[i].tolist(), "r": int(d.r[i]),
                "s2": d.s2[i].tolist(), "g": d.g[i].tolist(), "done": int(d.done[i]),
                "traj": int(d.traj[i]), "t": int(d.t[i]), "origin": ORIGINS[d.origin[i]],
            }
            fh.write(json.dumps(row) + "\n")
    os.replace(tmp, path)


def load_dataset(path):
    with open(path) as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file, missing metadata header", 1)
    try:
        header = json.loads(lines[0])
        env, sdim, adim, gdim = header["env"], header["sdim"], header["adim"], header["gdim"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"bad metadata header: {exc}", 1) from exc

    n = len(lines) - 1
    s, s2 = np.zeros((n, sdim)), np.zeros((n, sdim))
    a, g = np.zeros((n, adim)), np.zeros((n, gdim))
    r = np.zeros(n)
    done = np.zeros(n, dtype=bool)
    traj, t, origin = (np.zeros(n, dtype=np.int64) for _ in range(3))
    widths = {"s": sdim, "s2": sdim, "a": adim, "g": gdim}
    for i, line in enumerate(lines[1:]):
        lineno = i + 2
        try:
            row = json.loads(line)
            missing = [k for k in _KEYS if k not in row]
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed transition: {exc.msg}", lineno) from exc
        if not isinstance(row, dict) or missing:
            raise ParseError(f"transition missing fields {missing}", lineno)
        for k, w in widths.items():
            if len(row[k]) != w:
                raise SchemaError(f"line {lineno}: field {k!r} has {len(row[k])} entries, expected {w}")
        if row["r"] not in (0, 1) or row["origin"] not in ORIGINS:
            raise SchemaError(f"line {lineno}: bad reward or origin")
        s[i], a[i], s2[i], g[i] = row["s"], row["a"], row["s2"], row["g"]
        r[i], done[i], traj[i], t[i] = row["r"], bool(row["done"]), row["traj"], row["t"]
        origin[i] = ORIGINS.index(row["origin"])
    meta = {k: v for k, v in header.items() if k not in ("env", "sdim", "adim", "gdim")}
    return Dataset(env, s, a, r, s2, g, done, traj, t, origin, meta)

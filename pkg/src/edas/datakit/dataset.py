"""Column-oriented transition storage."""

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import InvalidArgument, SchemaError

ORIGINS = ("original", "augmented", "relabeled")
_ENV_DIMS = {"point_mass": (4, 2, 2), "reacher": (4, 2, 2)}


@dataclass(frozen=True)
class Transition:
    s: tuple
    a: tuple
    r: float
    s2: tuple
    g: tuple
    done: bool
    traj_id: int
    t: int
    origin: str = "original"


@dataclass
class Dataset:
    """Transitions stored as parallel arrays, one row per step.

    ``origin`` holds indices into :data:`ORIGINS`.  ``meta`` carries the
    generation metadata (seed, controller gains, ...) and is persisted in
    the file header.
    """

    env: str
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    g: np.ndarray
    done: np.ndarray
    traj: np.ndarray
    t: np.ndarray
    origin: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.r)
        for name in ("s", "a", "s2", "g"):
            arr = getattr(self, name)
            if arr.ndim != 2 or arr.shape[0] != n:
                raise SchemaError(f"column {name!r} has shape {arr.shape}, expected ({n}, k)")
        if self.s.shape[1] != self.s2.shape[1]:
            raise SchemaError("s and s2 have different widths")
        for name in ("done", "traj", "t", "origin"):
            if getattr(self, name).shape != (n,):
                raise SchemaError(f"column {name!r} must have length {n}")
        dims = _ENV_DIMS.get(self.env)
        if dims is not None and (self.sdim, self.adim, self.gdim) != dims:
            raise SchemaError(f"{self.env} needs (sdim, adim, gdim) = {dims}, "
                              f"got {(self.sdim, self.adim, self.gdim)}")
        if not np.all((self.r == 0) | (self.r == 1)):
            raise SchemaError("rewards must be 0 or 1")
        if not all(np.all(np.isfinite(getattr(self, c))) for c in ("s", "a", "s2", "g")):
            raise SchemaError("non-finite entries in a state, action or goal column")

    @classmethod
    def empty(cls, env, sdim, adim, gdim, meta=None):
        z = lambda k: np.zeros((0, k))
        zi = np.zeros(0, dtype=np.int64)
        return cls(env, z(sdim), z(adim), np.zeros(0), z(sdim), z(gdim),
                   np.zeros(0, dtype=bool), zi, zi.copy(), zi.copy(), dict(meta or {}))

    @property
    def sdim(self):
        return self.s.shape[1]

    @property
    def adim(self):
        return self.a.shape[1]

    @property
    def gdim(self):
        return self.g.shape[1]

    def __len__(self):
        return len(self.r)

    def __getitem__(self, i):
        return Transition(
            tuple(self.s[i].tolist()), tuple(self.a[i].tolist()), float(self.r[i]),
            tuple(self.s2[i].tolist()), tuple(self.g[i].tolist()), bool(self.done[i]),
            int(self.traj[i]), int(self.t[i]), ORIGINS[self.origin[i]])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        cols = ("s", "a", "r", "s2", "g", "done", "traj", "t", "origin")
        return self.env == other.env and all(
            np.array_equal(getattr(self, c), getattr(other, c)) for c in cols)

    def replace(self, **cols):
        kw = {c: getattr(self, c) for c in
              ("env", "s", "a", "r", "s2", "g", "done", "traj", "t", "origin", "meta")}
        kw.update(cols)
        return Dataset(**kw)

    def subset(self, index):
        index = np.asarray(index)
        return self.replace(**{c: getattr(self, c)[index] for c in
                               ("s", "a", "r", "s2", "g", "done", "traj", "t", "origin")})

    def trajectories(self):
        """Yield ``(traj_id, row_indices)`` with rows sorted by step index."""
        order = np.lexsort((self.t, self.traj))
        ids = self.traj[order]
        cuts = np.flatnonzero(np.diff(ids)) + 1
        for rows in np.split(order, cuts):
            if len(rows):
                yield int(self.traj[rows[0]]), rows

    def final_rows(self):
        return np.array([rows[-1] for _, rows in self.trajectories()], dtype=np.int64)


def concat(datasets, meta=None):
    datasets = list(datasets)
    if not datasets:
        raise InvalidArgument("nothing to concatenate")
    first = datasets[0]
    for d in datasets[1:]:
        if (d.env, d.sdim, d.adim, d.gdim) != (first.env, first.sdim, first.adim, first.gdim):
            raise SchemaError("cannot concatenate datasets with different layouts")
    cols = {c: np.concatenate([getattr(d, c) for d in datasets])
            for c in ("s", "a", "r", "s2", "g", "done", "traj", "t", "origin")}
    return Dataset(first.env, meta=dict(first.meta if meta is None else meta), **cols)


def check_chaining(d, atol=0.0):
    """True when s2[t] == s[t+1] inside every trajectory."""
    for _, rows in d.trajectories():
        if len(rows) > 1 and not np.allclose(d.s2[rows[:-1]], d.s[rows[1:]], rtol=0, atol=atol):
            return False
    return True

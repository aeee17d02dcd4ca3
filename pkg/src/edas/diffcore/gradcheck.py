import numpy as np

from ..exceptions import InvalidArgument, NumericalFailure


def finite_diff_grad(loss_fn, params, step=1e-5):
    """Central-difference gradient of ``loss_fn()`` w.r.t. each array in ``params``.

    ``loss_fn`` takes no arguments and must read ``params`` by reference;
    entries are perturbed in place and restored afterwards.
    """
    if not step > 0:
        raise InvalidArgument("finite-difference step must be positive")
    grads = []
    for p in params:
        g = np.zeros_like(p, dtype=float)
        flat = p.reshape(-1)  # view: writes go through to p
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(loss_fn())
            flat[i] = orig - step
            lo = float(loss_fn())
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericalFailure("non-finite loss during finite differencing", i)
            g.reshape(-1)[i] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-8):
    """Largest elementwise relative error, skipping entries below ``floor``."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a, dtype=float).ravel()
        n = np.asarray(n, dtype=float).ravel()
        keep = (np.abs(a) >= floor) | (np.abs(n) >= floor)
        if not keep.any():
            continue
        a, n = a[keep], n[keep]
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(rel.max()))
    return worst

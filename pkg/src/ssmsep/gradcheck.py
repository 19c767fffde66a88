"""Central finite-difference oracles for gradient verification.

Used by the test suite and by the ``check`` CLI command. All checks run in
double precision; the perturbation step defaults to the cube root of machine
epsilon scaled to the parameter magnitude, the standard choice for central
differences.
"""

from __future__ import annotations

import numpy as np


def central_difference(f, arrays, eps=1e-6):
    """Gradients of scalar ``f(*arrays)`` w.r.t. every entry of every array.

    Returns a list of arrays of the same shapes. O(2 * total_size) calls of f:
    meant for small instances only.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            h = eps * max(1.0, abs(orig))
            flat[i] = orig + h
            fp = f(*arrays)
            flat[i] = orig - h
            fm = f(*arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def sampled_central_difference(f, arrays, indices_per_array, eps=1e-6):
    """Like central_difference but only at the given flat indices.

    ``indices_per_array`` is a list parallel to ``arrays``; each entry is a
    sequence of flat indices into that array. Returns a list of
    (indices, grads) pairs.
    """
    out = []
    for arr, indices in zip(arrays, indices_per_array):
        flat = arr.reshape(-1)
        vals = np.zeros(len(indices), dtype=np.float64)
        for j, i in enumerate(indices):
            orig = flat[i]
            h = eps * max(1.0, abs(orig))
            flat[i] = orig + h
            fp = f(*arrays)
            flat[i] = orig - h
            fm = f(*arrays)
            flat[i] = orig
            vals[j] = (fp - fm) / (2.0 * h)
        out.append((np.asarray(indices), vals))
    return out


def relative_error(a, b, floor=1e-9):
    """Max elementwise relative error with an absolute floor for tiny values."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0

"""Dense symmetric tensors and multilinear primitives.

Tensors are plain ``numpy`` arrays of shape ``(d,) * k`` with ``k`` in {2, 3, 4}.
Index order is row-major (first index slowest), so ``T.ravel()`` is the flat
layout used for serialization.
"""

from functools import lru_cache
from itertools import permutations
from math import factorial

import numpy as np

from .errors import OrderRangeError, ShapeError

ORDERS = (2, 3, 4)
SYMMETRY_RTOL = 1e-12


def _check_order(k):
    if k not in ORDERS:
        raise OrderRangeError(f"tensor order must be one of {ORDERS}, got {k}")


def check_tensor(T):
    """Return ``T`` as a float array after verifying it is a cubical k-tensor."""
    T = np.asarray(T, dtype=float)
    _check_order(T.ndim)
    if len(set(T.shape)) != 1:
        raise ShapeError(f"tensor must have equal dimensions, got shape {T.shape}",
                         operation="check_tensor")
    return T


@lru_cache(maxsize=64)
def _sorted_indices(d, k):
    """Per entry, its index tuple sorted ascending, shape ``(k, d**k)``."""
    idx = np.indices((d,) * k).reshape(k, -1)
    return np.sort(idx, axis=0)


def tensor_power(v, k):
    """The k-fold outer power v ⊗ ... ⊗ v.

    Each entry multiplies its factors in sorted index order, so the result is
    symmetric bit for bit.
    """
    _check_order(k)
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ShapeError("tensor_power expects a vector", operation="tensor_power")
    d = v.size
    idx = _sorted_indices(d, k)
    out = v[idx[0]]
    for m in range(1, k):
        out = out * v[idx[m]]
    return out.reshape((d,) * k)


def n_mode_product(T, v, n):
    """Contract slot ``n`` (1-based) of ``T`` against ``v``; order drops by one."""
    T = np.asarray(T, dtype=float)
    v = np.asarray(v, dtype=float)
    if not 1 <= n <= T.ndim:
        raise ShapeError(f"mode {n} out of range for order {T.ndim}")
    if v.shape != (T.shape[n - 1],):
        raise ShapeError(f"vector of shape {v.shape} does not match tensor dim {T.shape[0]}")
    return np.tensordot(T, v, axes=([n - 1], [0]))


def multi_contract(T, v, count):
    """Apply ``count`` successive mode-1 products with ``v``.

    ``count == k - 1`` gives the vector ``T v^{k-1}`` of the eigen-equation,
    ``count == k`` the scalar ``T v^k``.
    """
    T = np.asarray(T, dtype=float)
    v = np.asarray(v, dtype=float)
    k = T.ndim
    if count not in (k - 1, k):
        raise ShapeError(f"count must be {k - 1} or {k}, got {count}",
                         operation="multi_contract")
    if v.shape != (T.shape[0],):
        raise ShapeError(f"vector of shape {v.shape} does not match tensor dim {T.shape[0]}",
                         operation="multi_contract")
    out = T
    for _ in range(count):
        out = np.tensordot(out, v, axes=([0], [0]))
    return out if count < k else float(out)


def frobenius_norm(T):
    T = np.asarray(T, dtype=float).ravel()
    n = float(np.sqrt(T @ T))
    if 1e-150 < n < 1e150:
        return n
    scale = float(np.max(np.abs(T))) if T.size else 0.0
    if scale == 0.0 or not np.isfinite(scale):
        return scale
    # rescaled so tiny or huge entries do not under/overflow when squared
    U = T / scale
    return float(scale * np.sqrt(U @ U))


@lru_cache(maxsize=64)
def _canonical_flat(d, k):
    """Flat position of each entry's sorted index tuple."""
    return np.ravel_multi_index(tuple(_sorted_indices(d, k)), (d,) * k)


def symmetrize(T):
    """Average ``T`` over all permutations of its indices.

    The result is symmetric bit for bit (every entry is copied from its sorted
    index), so symmetrizing twice returns the same array.
    """
    T = np.asarray(T, dtype=float)
    k = T.ndim
    if k <= 1:
        return T.copy()
    d = T.shape[0]
    canon = _canonical_flat(d, k)
    flat = T.reshape(-1)
    if np.array_equal(flat, flat[canon]):
        return T.copy()
    out = np.zeros_like(T)
    for perm in permutations(range(k)):
        out += T.transpose(perm)
    out /= factorial(k)
    return out.reshape(-1)[canon].reshape(T.shape)


def is_symmetric(T, rtol=SYMMETRY_RTOL):
    T = np.asarray(T, dtype=float)
    scale = frobenius_norm(T)
    if scale == 0.0:
        return True
    for perm in permutations(range(T.ndim)):
        if frobenius_norm(T - T.transpose(perm)) > rtol * scale:
            return False
    return True


def unfold(T):
    """Reshape to ``d x d^(k-1)``: row is the first index, trailing indices are
    flattened with the second index varying fastest."""
    T = np.asarray(T, dtype=float)
    d = T.shape[0]
    return T.reshape(d, -1, order="F")


def refold(M, k):
    M = np.asarray(M, dtype=float)
    d = M.shape[0]
    return M.reshape((d,) * k, order="F")


def random_symmetric(d, k, rng):
    """Symmetrized tensor of i.i.d. standard normal entries."""
    return symmetrize(rng.standard_normal((d,) * k))


def to_json(T):
    T = check_tensor(T)
    return {"order": T.ndim, "dim": T.shape[0], "entries": T.ravel().tolist()}


def from_json(obj, symmetrize_input=True):
    k, d = int(obj["order"]), int(obj["dim"])
    _check_order(k)
    entries = np.asarray(obj["entries"], dtype=float)
    if entries.size != d ** k:
        raise ShapeError(f"expected {d ** k} entries, got {entries.size}",
                         operation="from_json")
    T = entries.reshape((d,) * k)
    return symmetrize(T) if symmetrize_input else T

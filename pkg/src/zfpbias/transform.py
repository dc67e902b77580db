"""Decorrelating block transform: exact matrices and the integer lifting pair.

Blocks are arrays whose trailing axis has length ``4**d``.  The flat
position of element ``(x, y, z)`` is ``x + 4*y + 16*z``, so reshaping the
trailing axis to ``(4,)*d`` in C order gives axes ``[..., z, y, x]``.
The forward transform runs along x, then y, then z; the backward transform
runs in the reverse order.
"""
from __future__ import annotations

from fractions import Fraction
from functools import lru_cache

import numpy as np

FORWARD_NUMERATORS = ((4, 4, 4, 4), (5, 1, -1, -5), (-4, 4, 4, -4), (-2, 6, -6, 2))
FORWARD_SCALE = 16
BACKWARD_NUMERATORS = ((4, 6, -4, -1), (4, 2, 4, 5), (4, -2, 4, -5), (4, -6, -4, 1))
BACKWARD_SCALE = 4

# int64 lifting is exact while inputs stay below this magnitude
LIFT_LIMIT = 1 << 62


def _check_dim(d: int) -> None:
    if d not in (1, 2, 3):
        raise ValueError(f"unsupported dimension d={d}; expected 1, 2 or 3")


def round_half_down(v):
    """floor(v / 2) for integers; this is the arithmetic right shift."""
    return v >> 1


def forward_matrix_1d() -> np.ndarray:
    return np.array([[Fraction(a, FORWARD_SCALE) for a in row] for row in FORWARD_NUMERATORS],
                    dtype=object)


def backward_matrix_1d() -> np.ndarray:
    return np.array([[Fraction(a, BACKWARD_SCALE) for a in row] for row in BACKWARD_NUMERATORS],
                    dtype=object)


@lru_cache(maxsize=None)
def _kron_cached(d: int, backward: bool) -> np.ndarray:
    base = backward_matrix_1d() if backward else forward_matrix_1d()
    out = np.array([[Fraction(1)]], dtype=object)
    for _ in range(d):
        # x is the fastest axis, so later axes go on the left
        out = np.kron(base, out)
    return out


def kron_matrix(d: int, backward: bool = False) -> np.ndarray:
    """Dense ``4**d`` square transform matrix with Fraction entries."""
    _check_dim(d)
    return _kron_cached(d, backward).copy()


# ---------------------------------------------------------------------------
# lifting steps on the last axis of integer arrays


def _fwd_lift(x, y, z, w):
    x = x + w; x = x >> 1; w = w - x
    z = z + y; z = z >> 1; y = y - z
    x = x + z; x = x >> 1; z = z - x
    w = w + y; w = w >> 1; y = y - w
    w = w + (y >> 1); y = y - (w >> 1)
    return x, y, z, w


def _inv_lift(x, y, z, w):
    y = y + (w >> 1); w = w - (y >> 1)
    y = y + w; w = w << 1; w = w - y
    z = z + x; x = x << 1; x = x - z
    y = y + z; z = z << 1; z = z - y
    w = w + x; x = x << 1; x = x - w
    return x, y, z, w


def _as_int_array(a) -> np.ndarray:
    arr = np.asarray(a)
    if arr.dtype == object:
        vals = [int(v) for v in arr.ravel()]
        if any(abs(v) >= LIFT_LIMIT for v in vals):
            raise OverflowError("lifting input exceeds the int64 safe range")
        return np.array(vals, dtype=np.int64).reshape(arr.shape)
    if not np.issubdtype(arr.dtype, np.integer):
        raise TypeError("lifting transforms need integer input")
    return arr.astype(np.int64, copy=False)


def _lift_last_axis(a: np.ndarray, step) -> np.ndarray:
    parts = step(a[..., 0], a[..., 1], a[..., 2], a[..., 3])
    return np.stack(parts, axis=-1)


def forward_lossy_1d(a) -> np.ndarray:
    """Integer forward lift on the last axis (length 4)."""
    a = _as_int_array(a)
    if a.shape[-1] != 4:
        raise ValueError("last axis must have length 4")
    if np.any(np.abs(a) >= LIFT_LIMIT):
        raise OverflowError("lifting input exceeds the int64 safe range")
    return _lift_last_axis(a, _fwd_lift)


def backward_lossy_1d(a) -> np.ndarray:
    """Integer backward lift on the last axis (length 4).

    Arithmetic wraps modulo 2**64 exactly as in the reference C code, which
    keeps the result correct whenever the true output fits in int64.
    """
    a = _as_int_array(a)
    if a.shape[-1] != 4:
        raise ValueError("last axis must have length 4")
    with np.errstate(over="ignore"):
        return _lift_last_axis(a, _inv_lift)


def _to_grid(block: np.ndarray, d: int) -> np.ndarray:
    n = 4 ** d
    if block.shape[-1] != n:
        raise ValueError(f"trailing axis must have length {n} for d={d}")
    return block.reshape(block.shape[:-1] + (4,) * d)


def _apply_axes(grid: np.ndarray, d: int, fn, order) -> np.ndarray:
    for k in order:
        axis = grid.ndim - 1 - k  # k = 0 is x, the last axis
        grid = np.moveaxis(fn(np.moveaxis(grid, axis, -1)), -1, axis)
    return grid


def forward_lossy(block, d: int) -> np.ndarray:
    _check_dim(d)
    block = _as_int_array(block)
    if np.any(np.abs(block) >= LIFT_LIMIT):
        raise OverflowError("lifting input exceeds the int64 safe range")
    grid = _apply_axes(_to_grid(block, d), d, forward_lossy_1d, range(d))
    return grid.reshape(block.shape)


def backward_lossy(block, d: int) -> np.ndarray:
    _check_dim(d)
    block = _as_int_array(block)
    grid = _apply_axes(_to_grid(block, d), d, backward_lossy_1d, reversed(range(d)))
    return grid.reshape(block.shape)


def _matmul_last(mat: np.ndarray):
    return lambda a: a @ mat.T


def forward_exact(block, d: int) -> np.ndarray:
    """Exact forward transform; Fraction output for object/integer input."""
    _check_dim(d)
    arr = np.asarray(block)
    mat = forward_matrix_1d()
    if arr.dtype != object:
        if np.issubdtype(arr.dtype, np.floating):
            mat = mat.astype(np.float64)
        else:
            arr = arr.astype(object)
    grid = _apply_axes(_to_grid(arr, d), d, _matmul_last(mat), range(d))
    return grid.reshape(arr.shape)


def backward_exact(block, d: int) -> np.ndarray:
    _check_dim(d)
    arr = np.asarray(block)
    mat = backward_matrix_1d()
    if arr.dtype != object:
        if np.issubdtype(arr.dtype, np.floating):
            mat = mat.astype(np.float64)
        else:
            arr = arr.astype(object)
    grid = _apply_axes(_to_grid(arr, d), d, _matmul_last(mat), reversed(range(d)))
    return grid.reshape(arr.shape)


def forward(block, d: int, lossy: bool = True) -> np.ndarray:
    return forward_lossy(block, d) if lossy else forward_exact(block, d)


def backward(block, d: int, lossy: bool = True) -> np.ndarray:
    return backward_lossy(block, d) if lossy else backward_exact(block, d)


@lru_cache(maxsize=None)
def _sequency_cached(d: int) -> tuple[int, ...]:
    coords = []
    for flat in range(4 ** d):
        axes = tuple((flat >> (2 * k)) & 3 for k in range(d))  # (x, y, z)
        coords.append((sum(axes), axes[::-1], flat))
    coords.sort()
    return tuple(c[-1] for c in coords)


def sequency_permutation(d: int) -> np.ndarray:
    """``perm[p]`` is the flat index of the p-th coefficient in sequency order.

    Coefficients are grouped by the sum of their per-axis frequency indices;
    ties are broken by the (z, y, x) tuple.
    """
    _check_dim(d)
    return np.array(_sequency_cached(d), dtype=np.intp)


def inverse_sequency_permutation(d: int) -> np.ndarray:
    perm = sequency_permutation(d)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return inv


def worst_element_index(d: int) -> int:
    """0-based position of the smallest |row sum| of the backward matrix.

    This is where the truncation bias prediction is most fragile once
    leading coefficient bits start being discarded.
    """
    sums = kron_matrix(d, backward=True).sum(axis=1)
    mags = np.array([abs(s) for s in sums])
    return int(np.argmin(mags))

"""Bit-vector representations over a fixed index window.

Two bases are supported: sign-magnitude binary (base 2 with an explicit
sign flag) and negabinary (base -2, signless).  A ``BitVector`` stores the
set of active indices as an integer bitmask over the window
``[WINDOW_LO, WINDOW_HI]`` so that fractional digits are representable.

The module also carries vectorised helpers used by the codec: conversion of
int64 arrays to and from the uint64 negabinary encoding, and plane
truncation.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ZeroBlock

WINDOW_LO = -64
WINDOW_HI = 63
_WIDTH = WINDOW_HI - WINDOW_LO + 1

# 0b1010...10 over 64 bits: the classic int -> negabinary mask
NB_MASK = 0xAAAAAAAAAAAAAAAA
_NB_MASK_U64 = np.uint64(NB_MASK)


class Base(str, enum.Enum):
    SIGNED_BINARY = "signed_binary"
    NEGABINARY = "negabinary"


def _radix(base: Base) -> int:
    return 2 if Base(base) is Base.SIGNED_BINARY else -2


@dataclass(frozen=True)
class BitVector:
    """Finite digit string in base 2 (with sign) or base -2.

    ``mask`` bit ``i - WINDOW_LO`` is set when index ``i`` is active.
    """

    base: Base
    mask: int
    sign: int = 0  # 1 means negative; only meaningful for signed binary

    def __post_init__(self):
        object.__setattr__(self, "base", Base(self.base))
        if self.mask < 0 or self.mask >> _WIDTH:
            raise OverflowError("active index outside the representable window")
        if self.sign not in (0, 1):
            raise ValueError("sign must be 0 or 1")
        if self.base is Base.NEGABINARY and self.sign:
            raise ValueError("negabinary vectors carry no sign flag")
        if self.mask == 0 and self.sign:
            object.__setattr__(self, "sign", 0)

    @classmethod
    def from_indices(cls, base, indices: Iterable[int], sign: int = 0) -> "BitVector":
        mask = 0
        for i in indices:
            if not WINDOW_LO <= i <= WINDOW_HI:
                raise OverflowError(f"index {i} outside [{WINDOW_LO}, {WINDOW_HI}]")
            mask |= 1 << (i - WINDOW_LO)
        return cls(base, mask, sign)

    @property
    def active(self) -> tuple[int, ...]:
        m, out, pos = self.mask, [], WINDOW_LO
        while m:
            if m & 1:
                out.append(pos)
            m >>= 1
            pos += 1
        return tuple(out)

    @property
    def is_zero(self) -> bool:
        return self.mask == 0

    @property
    def e_max(self) -> int:
        if self.is_zero:
            raise ValueError("zero vector has no active index")
        return self.mask.bit_length() - 1 + WINDOW_LO

    @property
    def e_min(self) -> int:
        if self.is_zero:
            raise ValueError("zero vector has no active index")
        return (self.mask & -self.mask).bit_length() - 1 + WINDOW_LO


def to_real(v: BitVector) -> Fraction:
    """Exact value of ``v``."""
    r = _radix(v.base)
    total = sum((Fraction(r) ** i for i in v.active), Fraction(0))
    return -total if v.sign else total


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, Rational):
        return Fraction(x.numerator, x.denominator)
    xf = float(x)
    if not np.isfinite(xf):
        raise ValueError("non-finite value has no digit representation")
    return Fraction(xf)


def _check_dyadic(x: Fraction) -> None:
    den = x.denominator
    if den & (den - 1):
        raise ValueError(f"{x} is not a dyadic rational")
    if den.bit_length() - 1 > -WINDOW_LO:
        raise OverflowError(f"{x} needs digits below index {WINDOW_LO}")


def from_real(x, base) -> BitVector:
    """Exact digit expansion of a dyadic rational.

    Raises ValueError for non-dyadic input and OverflowError when digits
    fall outside the window.
    """
    base = Base(base)
    x = _as_fraction(x)
    _check_dyadic(x)
    # work with the integer n = x * 2^64 so everything is exact
    n = x.numerator * (1 << (-WINDOW_LO)) // x.denominator
    if base is Base.SIGNED_BINARY:
        mag = abs(n)
        if mag >> _WIDTH:
            raise OverflowError(f"{x} exceeds the window")
        return BitVector(base, mag, 1 if n < 0 else 0)
    # negabinary: digits of n in base -2, then shift; since -WINDOW_LO is
    # even the index shift by 64 preserves the digit signs
    mask, pos = 0, 0
    while n:
        n, rem = divmod(n, -2)
        if rem:
            n += 1
            mask |= 1 << pos
        pos += 1
    if mask >> _WIDTH:
        raise OverflowError(f"{x} exceeds the window")
    return BitVector(base, mask)


def convert(v: BitVector, target) -> BitVector:
    return from_real(to_real(v), target)


def truncate(v: BitVector, eta: int) -> BitVector:
    """Zero every digit at index <= eta."""
    keep_from = eta + 1 - WINDOW_LO
    if keep_from <= 0:
        return v
    return BitVector(v.base, (v.mask >> keep_from) << keep_from, v.sign)


def shift(v: BitVector, ell: int) -> BitVector:
    """Move the digit at index i to index i - ell.

    For signed binary this multiplies the value by 2**-ell; for negabinary
    by (-2)**-ell, so odd shifts flip the sign of the value.
    """
    if ell == 0 or v.is_zero:
        return v
    if ell > 0:
        if v.mask & ((1 << ell) - 1):
            raise OverflowError("shift pushes digits below the window")
        mask = v.mask >> ell
    else:
        mask = v.mask << (-ell)
        if mask >> _WIDTH:
            raise OverflowError("shift pushes digits above the window")
    return BitVector(v.base, mask, v.sign)


class ExponentInfo(NamedTuple):
    e_max: int
    e_min: int


def exponents(values, base=Base.SIGNED_BINARY) -> ExponentInfo:
    """Largest and smallest active index over a vector or a block of values."""
    if isinstance(values, BitVector):
        items = [values]
    else:
        items = [x if isinstance(x, BitVector) else from_real(x, base)
                 for x in np.ravel(np.asarray(values, dtype=object))]
    items = [v for v in items if not v.is_zero]
    if not items:
        raise ZeroBlock("all-zero input has no exponent")
    return ExponentInfo(max(v.e_max for v in items), min(v.e_min for v in items))


# ---------------------------------------------------------------------------
# vectorised helpers on machine integers


def int_to_negabinary(a) -> np.ndarray:
    """int64 -> uint64 negabinary digit pattern (bit i holds digit i)."""
    u = np.asarray(a, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        return (u + _NB_MASK_U64) ^ _NB_MASK_U64


def negabinary_to_int(u) -> np.ndarray:
    u = np.asarray(u, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return ((u ^ _NB_MASK_U64) - _NB_MASK_U64).astype(np.int64)


def truncate_planes(u: np.ndarray, eta: int) -> np.ndarray:
    """Zero digit planes 0..eta of uint64 digit patterns."""
    u = np.asarray(u, dtype=np.uint64)
    if eta < 0:
        return u.copy()
    if eta >= 63:
        return np.zeros_like(u)
    keep = np.uint64(((1 << 64) - 1) ^ ((1 << (eta + 1)) - 1))
    return u & keep


def bit_length(u: np.ndarray) -> np.ndarray:
    """Exact bit length of non-negative uint64 values (0 for zero)."""
    u = np.asarray(u, dtype=np.uint64)
    _, e = np.frexp(u.astype(np.float64))
    e = e.astype(np.int64)
    # float rounding can overshoot by one for values near a power of two
    over = (e > 0) & ((u >> np.clip(e - 1, 0, 63).astype(np.uint64)) == 0)
    return e - over

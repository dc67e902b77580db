"""Closed-form predictions for the mean reconstruction error.

Sign convention throughout: errors are ``reconstructed - original``.
With ``eta = q + 1 - beta`` the highest discarded plane, dropping negabinary
planes ``0..eta`` shifts a coefficient by ``(-2)**(eta+1) / 6`` on average.
The integer lifting transform adds a fixed expected offset per coefficient,
and the exact backward matrix carries both into the value domain.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from . import transform as tf
from .bitplane import Base
from .codec import CodecConfig, Rounding
from .errors import BetaOutOfAnalysisRange

# expected gap (exact forward) - (integer lift) for one axis, uniform integers
LIFT_GAP_1D = (Fraction(1, 2), Fraction(-9, 16), Fraction(-1, 4), Fraction(1, 8))

# each lifting rounding error is 0 or -1/2 with equal probability
ROUNDING_ERROR_VALUES = (Fraction(-1, 2), Fraction(0))


def lift_gap_terms() -> np.ndarray:
    """Linear map from the six shift remainders to the 4-coefficient gap.

    Row i gives the gap in coefficient i as a combination of the rounding
    errors introduced by each ``>> 1`` in the forward lift, in execution
    order.  Derived by propagating each remainder through the remaining
    lifting steps.
    """
    t = Fraction
    # symbolic propagation: each shift r(v) = v/2 + e with e in {0, -1/2}
    # we track how each e enters the outputs by linearity
    n_err = 6
    basis = np.eye(n_err, dtype=object) * t(1)

    def zero():
        return np.zeros(n_err, dtype=object) * t(1)

    # values are (exact-linear part ignored, error vector)
    x = zero(); y = zero(); z = zero(); w = zero()
    x = x + w; x = x / 2 + basis[0]; w = w - x
    z = z + y; z = z / 2 + basis[1]; y = y - z
    x = x + z; x = x / 2 + basis[2]; z = z - x
    w = w + y; w = w / 2 + basis[3]; y = y - w
    w = w + (y / 2 + basis[4]); y = y - (w / 2 + basis[5])
    lossy_minus_exact = np.stack([x, y, z, w])
    return -lossy_minus_exact


def lift_gap_distribution() -> list[dict]:
    """Exact distribution of each coefficient's gap under independent fair errors.

    Returns one dict per coefficient mapping gap value -> probability.
    """
    from itertools import product

    m = lift_gap_terms()
    out = [dict() for _ in range(4)]
    combos = list(product(ROUNDING_ERROR_VALUES, repeat=m.shape[1]))
    p = Fraction(1, len(combos))
    for errs in combos:
        e = np.array(errs, dtype=object)
        vals = m.dot(e)
        for i in range(4):
            out[i][vals[i]] = out[i].get(vals[i], 0) + p
    return out


def expected_transform_gap(d: int) -> np.ndarray:
    """Expected (exact - lossy) forward transform gap in d dimensions.

    Each axis pass contributes the 1-d gap along its own axis, and every
    later pass carries earlier gaps through the exact 1-d matrix.
    """
    tf._check_dim(d)
    gap1 = np.array(LIFT_GAP_1D, dtype=object)
    fwd = tf.forward_matrix_1d()
    grid = np.zeros((4,) * d, dtype=object) * Fraction(1)
    for k in range(d):
        axis = d - 1 - k
        # carry what is there through the exact transform on this axis
        grid = np.moveaxis(np.moveaxis(grid, axis, -1) @ fwd.T, -1, axis)
        shape = [1] * d
        shape[axis] = 4
        grid = grid + gap1.reshape(shape)
    return grid.reshape(-1)


def truncation_mean(eta: int) -> Fraction:
    """Mean of t(a) - a when negabinary digits 0..eta are dropped."""
    if eta < 0:
        return Fraction(0)
    return Fraction((-2) ** (eta + 1), 6)


@dataclass(frozen=True)
class TruncationStats:
    mean: Optional[Fraction]
    lower: Optional[Fraction]
    upper: Optional[Fraction]
    closed: bool  # whether the bounds are attained


def truncation_stats(base, eta: int, leading_retained: bool = True,
                     input_mean: Optional[Fraction] = None,
                     offset: Fraction = Fraction(0)) -> TruncationStats:
    """Mean and support of ``t(a) - a`` for digits 0..eta dropped.

    With ``leading_retained`` the leading digit survives truncation; otherwise
    the whole value is discarded and the mean is ``-input_mean``.
    ``offset`` is a rounding shift added to the result.
    """
    base = Base(base)
    scale = Fraction(2) ** (eta + 1)
    if not leading_retained:
        mean = None if input_mean is None else -Fraction(input_mean) + offset
        return TruncationStats(mean, None, None, False)
    if base is Base.SIGNED_BINARY:
        return TruncationStats(Fraction(0) + offset, 1 - scale + offset, scale - 1 + offset, True)
    if eta % 2 == 0:
        lo, hi = -2 * scale / 3, scale / 3
    else:
        lo, hi = -scale / 3, 2 * scale / 3
    return TruncationStats(truncation_mean(eta) + offset, lo + offset, hi + offset, False)


@dataclass
class BiasPrediction:
    """Predicted mean error vector for one block configuration."""

    total: np.ndarray
    components: dict
    e_max: int
    ell: int
    floor: float
    reliable: bool
    cfg: CodecConfig = field(repr=False)

    @property
    def masked(self) -> np.ndarray:
        """Elements whose prediction is below the k-bit output resolution."""
        return np.abs(self.total) < self.floor

    def to_dict(self) -> dict:
        return {
            "d": self.cfg.d, "k": self.cfg.k, "q": self.cfg.q, "beta": self.cfg.beta,
            "rounding": self.cfg.rounding.value, "e_max": self.e_max, "ell": self.ell,
            "floor": self.floor, "reliable": self.reliable,
            "mean": self.total.tolist(),
            "masked": self.masked.tolist(),
            "components": {k: np.asarray(v, dtype=float).tolist()
                           for k, v in self.components.items()},
        }


def unit_bias(cfg: CodecConfig) -> dict:
    """Per-step predicted mean error in units of 2**ell (exact Fractions).

    The truncation term vanishes when a rounding mode centres it.
    """
    n = cfg.block_size
    inv = tf.kron_matrix(cfg.d, backward=True)
    trunc = truncation_mean(cfg.eta) if cfg.rounding is Rounding.NEVER else Fraction(0)
    gap = expected_transform_gap(cfg.d)
    zero = np.zeros(n, dtype=object) * Fraction(1)
    return {
        "decode_rounding": zero.copy(),
        "truncation": inv.dot(np.full(n, trunc, dtype=object)),
        # the lossy transform sits below the exact one by the gap
        "transform": -inv.dot(gap),
        "block_float": zero.copy(),
    }


def predict_total_bias(cfg: CodecConfig, e_max: int, warn: bool = True) -> BiasPrediction:
    """Predicted mean of reconstructed - original for blocks with this e_max."""
    ell = e_max - cfg.q + 1
    reliable = cfg.beta <= cfg.max_analysis_beta
    if not reliable and warn:
        warnings.warn(f"beta={cfg.beta} exceeds {cfg.max_analysis_beta}; prediction is "
                      "outside the model's validity range", BetaOutOfAnalysisRange, stacklevel=2)
    units = unit_bias(cfg)
    scale = 2.0 ** ell
    comps = {k: np.array([float(v) for v in vec]) * scale for k, vec in units.items()}
    total = sum(comps.values())
    return BiasPrediction(total, comps, e_max, ell, 2.0 ** (e_max - cfg.k), reliable, cfg)


# ---------------------------------------------------------------------------
# quantization-error densities


@dataclass(frozen=True)
class ErrorDensity:
    """Density of one component of L^-1 Y with Y uniform of unit width.

    ``f(x) = scale * sum_j (|x-(c-u_j)|^3 + |x-(c+u_j)|^3
                            - |x-(c-v_j)|^3 - |x-(c+v_j)|^3)``
    """

    index: int
    scale: Fraction
    center: Fraction
    u: tuple
    v: tuple
    weights: tuple  # absolute backward-matrix row entries

    @property
    def support(self) -> tuple[Fraction, Fraction]:
        h = max(self.u + self.v)
        return self.center - h, self.center + h

    def pdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        c = float(self.center)
        out = np.zeros_like(x)
        for uj in self.u:
            out += np.abs(x - (c - float(uj))) ** 3 + np.abs(x - (c + float(uj))) ** 3
        for vj in self.v:
            out -= np.abs(x - (c - float(vj))) ** 3 + np.abs(x - (c + float(vj))) ** 3
        out *= float(self.scale)
        lo, hi = self.support
        return np.where((x < float(lo)) | (x > float(hi)), 0.0, out)

    def cdf(self, x) -> np.ndarray:
        """Antiderivative of pdf, using d/dx |t|^4 sgn(t)/4 = |t|^3."""
        x = np.asarray(x, dtype=np.float64)
        lo, hi = (float(b) for b in self.support)
        c = float(self.center)

        def prim(t):
            s = np.zeros_like(t)
            for uj in self.u:
                for a in (c - float(uj), c + float(uj)):
                    s += np.sign(t - a) * (t - a) ** 4 / 4
            for vj in self.v:
                for a in (c - float(vj), c + float(vj)):
                    s -= np.sign(t - a) * (t - a) ** 4 / 4
            return s * float(self.scale)

        xc = np.clip(x, lo, hi)
        return prim(xc) - prim(np.full_like(xc, lo))

    @property
    def mean(self) -> Fraction:
        return self.center

    @property
    def variance(self) -> Fraction:
        return sum((w * w for w in self.weights), Fraction(0)) / 12

    def _knots(self):
        pos = [self.center + s * u for u in self.u for s in (-1, 1)]
        neg = [self.center + s * v for v in self.v for s in (-1, 1)]
        return pos, neg

    def abs_moment(self, power: int = 1) -> Fraction:
        """Exact E|X|**power by piecewise polynomial integration."""
        pos, neg = self._knots()
        lo, hi = self.support
        breaks = sorted(set(pos + neg + [lo, hi] + ([Fraction(0)] if lo < 0 < hi else [])))
        total = Fraction(0)
        for a, b in zip(breaks, breaks[1:]):
            if a < lo or b > hi:
                continue
            mid = (a + b) / 2
            # on (a, b) each |x - t|^3 is +-(x - t)^3; collect polynomial coefficients
            coeffs = [Fraction(0)] * 4
            for knots, sgn in ((pos, 1), (neg, -1)):
                for t in knots:
                    s = sgn if mid > t else -sgn
                    # (x - t)^3 = x^3 - 3t x^2 + 3t^2 x - t^3
                    coeffs[3] += s
                    coeffs[2] += s * -3 * t
                    coeffs[1] += s * 3 * t * t
                    coeffs[0] += s * -t ** 3
            coeffs = [self.scale * c for c in coeffs]
            sx = 1 if mid > 0 else -1
            # integrate sx^power * x^power * poly(x)
            for deg, c in enumerate(coeffs):
                p = deg + power + 1
                total += (sx ** power) * c * (b ** p - a ** p) / p
        return total


def quantization_density(index: int, y_mean: Fraction = Fraction(-1, 6)) -> ErrorDensity:
    """Density of component ``index`` (0-based) of L^-1 Y, Y ~ U(m-1/2, m+1/2).

    ``y_mean = -1/6`` is the truncated-negabinary case with an even number
    of discarded planes in the reference convention (Y on (-2/3, 1/3));
    ``y_mean = 0`` is the symmetric mid-tread case.
    """
    row = tf.backward_matrix_1d()[index]
    weights = tuple(abs(Fraction(a)) for a in row)
    center = Fraction(y_mean) * sum(row, Fraction(0))
    halves = [w / 2 for w in weights]
    from itertools import product

    u, v = [], []
    for signs in product((1, -1), repeat=4):
        s = sum((si * h for si, h in zip(signs, halves)), Fraction(0))
        if s < 0:
            continue
        if s == 0 and signs[0] == -1:
            continue
        neg = sum(1 for si in signs if si < 0) % 2
        (v if neg else u).append(s)
    prod_w = Fraction(1)
    for w in weights:
        prod_w *= w
    scale = 1 / (12 * prod_w)
    return ErrorDensity(index, scale, center, tuple(sorted(u)), tuple(sorted(v)), weights)


def sample_quantization_errors(n: int, rng: np.random.Generator, y_mean: float = -1 / 6,
                               d: int = 1) -> np.ndarray:
    """Draw L^-1 Y with independent Y_j ~ U(y_mean - 1/2, y_mean + 1/2)."""
    inv = tf.kron_matrix(d, backward=True).astype(np.float64)
    y = rng.uniform(y_mean - 0.5, y_mean + 0.5, size=(n, inv.shape[0]))
    return y @ inv.T

"""Monte Carlo experiments comparing measured codec error with predictions.

Randomness comes from counter-based Philox streams: trial chunk ``j`` of a
run seeded with ``s`` always draws from ``SeedSequence([s, j])``, and
per-chunk accumulators are merged in chunk order.  Results are therefore
identical for any thread count.
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import bias, codec
from .codec import CodecConfig, Rounding
from .errors import ConfigError, DegenerateField

CHUNK = 1 << 15
SCHEMA_VERSION = 1
CSV_FIELDS = ("schema_version", "d", "rho", "e_min", "rounding", "seed", "beta", "element",
              "measured", "predicted", "ratio", "relative_error", "sem", "masked", "floor",
              "trials")


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, chunk])))


def snap_to_precision(x: np.ndarray, k: int) -> np.ndarray:
    """Round values to k significant bits (k=24 is float32, k=53 is a no-op)."""
    if k >= 53:
        return np.asarray(x, dtype=np.float64)
    if k == 24:
        return np.asarray(x, dtype=np.float32).astype(np.float64)
    m, e = np.frexp(x)
    return np.ldexp(np.round(np.ldexp(m, k)), e - k)


@dataclass(frozen=True)
class SyntheticBlocks:
    """Random blocks spanning a chosen exponent range.

    Magnitudes cover ``[2**e_min, 2**(e_min + rho + 1))``.  That interval is
    cut into ``4**d`` pieces of equal log-width; one value is drawn
    uniformly from each piece, given a random sign, and the block is
    shuffled.  With ``rho = 0`` every block has ``e_max = e_min``.
    """

    d: int = 1
    e_min: int = -20
    rho: int = 0
    k: int = 24

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ConfigError(f"d must be 1, 2 or 3, got {self.d}")
        if self.rho < 0:
            raise ConfigError("rho must be non-negative")

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        m = 4 ** self.d
        edges = self.e_min + (self.rho + 1) * np.arange(m + 1) / m
        lo, hi = 2.0 ** edges[:-1], 2.0 ** edges[1:]
        mag = lo + (hi - lo) * rng.random((n, m))
        sign = np.where(rng.random((n, m)) < 0.5, -1.0, 1.0)
        x = sign * mag
        order = np.argsort(rng.random((n, m)), axis=1)
        x = np.take_along_axis(x, order, axis=1)
        return snap_to_precision(x, self.k)

    def top_binade_probability(self) -> float:
        """Chance that a block's largest magnitude reaches 2**(e_min + rho)."""
        m = 4 ** self.d
        top = 2.0 ** (self.e_min + self.rho)
        edges = self.e_min + (self.rho + 1) * np.arange(m + 1) / m
        lo, hi = 2.0 ** edges[:-1], 2.0 ** edges[1:]
        p_below = np.clip((top - lo) / (hi - lo), 0.0, 1.0)
        return float(1.0 - np.prod(p_below))


class RunningMoments:
    """Streaming mean and variance per element (Chan et al. merge)."""

    def __init__(self, size: int):
        self.count = 0
        self.mean = np.zeros(size)
        self.m2 = np.zeros(size)

    def update(self, batch: np.ndarray) -> "RunningMoments":
        batch = np.asarray(batch, dtype=np.float64)
        other = RunningMoments(batch.shape[-1])
        other.count = batch.shape[0]
        if other.count:
            other.mean = batch.mean(axis=0)
            other.m2 = ((batch - other.mean) ** 2).sum(axis=0)
        return self.merge(other)

    def merge(self, other: "RunningMoments") -> "RunningMoments":
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean.copy(), other.m2.copy()
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * other.count / n
        self.m2 = self.m2 + other.m2 + delta ** 2 * self.count * other.count / n
        self.count = n
        return self

    @property
    def variance(self) -> np.ndarray:
        return self.m2 / max(self.count - 1, 1)

    @property
    def sem(self) -> np.ndarray:
        return np.sqrt(self.variance / max(self.count, 1))


def _map_chunks(fn: Callable[[int, int], object], trials: int, chunk: int, threads: int) -> list:
    sizes = [min(chunk, trials - s) for s in range(0, trials, chunk)]
    jobs = list(enumerate(sizes))
    if threads <= 1:
        return [fn(j, n) for j, n in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


# ---------------------------------------------------------------------------
# bias sweep


@dataclass
class BetaResult:
    beta: int
    measured: np.ndarray
    predicted: np.ndarray
    sem: np.ndarray
    floor: float
    trials: int

    @property
    def masked(self) -> np.ndarray:
        return (np.abs(self.measured) < self.floor) | (np.abs(self.predicted) < self.floor)

    @property
    def ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            r = self.measured / self.predicted
        return np.where(self.masked, np.nan, r)

    @property
    def relative_error(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.abs(self.measured - self.predicted) / np.abs(self.measured)
        return np.where(self.masked, np.nan, r)


@dataclass
class BiasReport:
    source: SyntheticBlocks
    cfg: CodecConfig
    seed: int
    trials: int
    results: list = field(default_factory=list)

    def by_beta(self) -> dict:
        return {r.beta: r for r in self.results}

    def to_rows(self) -> list[dict]:
        rows = []
        for r in self.results:
            for i in range(len(r.measured)):
                rows.append({
                    "schema_version": SCHEMA_VERSION, "d": self.cfg.d, "rho": self.source.rho,
                    "e_min": self.source.e_min, "rounding": self.cfg.rounding.value,
                    "seed": self.seed, "beta": r.beta, "element": i, "measured": r.measured[i],
                    "predicted": r.predicted[i], "ratio": r.ratio[i],
                    "relative_error": r.relative_error[i], "sem": r.sem[i],
                    "masked": bool(r.masked[i]), "floor": r.floor, "trials": r.trials,
                })
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        rows = self.to_rows()
        writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        return buf.getvalue()

    def to_json(self) -> str:
        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in np.asarray(a, dtype=float)]
        return json.dumps({
            "schema_version": SCHEMA_VERSION,
            "config": {"d": self.cfg.d, "k": self.cfg.k, "q": self.cfg.q,
                       "rounding": self.cfg.rounding.value},
            "source": asdict(self.source),
            "seed": self.seed,
            "trials": self.trials,
            "results": [{
                "beta": r.beta, "measured": clean(r.measured), "predicted": clean(r.predicted),
                "ratio": clean(r.ratio), "relative_error": clean(r.relative_error),
                "sem": clean(r.sem), "masked": r.masked.tolist(), "floor": r.floor,
                "trials": r.trials,
            } for r in self.results],
        }, indent=2)


def run_bias_experiment(source: SyntheticBlocks, cfg: CodecConfig, betas: Iterable[int],
                        trials: int, seed: int, threads: int = 1,
                        chunk: int = CHUNK) -> BiasReport:
    """Measure the mean reconstruction error per element for each beta.

    All betas see the same blocks, and the prediction for each beta uses
    the average block scale ``2**ell`` of the blocks actually drawn.
    """
    if source.d != cfg.d:
        raise ConfigError("source and codec dimensions differ")
    if source.k != cfg.k:
        raise ConfigError("source precision must match the codec's k")
    betas = [int(b) for b in betas]
    for b in betas:
        cfg.with_beta(b)  # validates
    n = cfg.block_size

    def work(j: int, size: int):
        x = source.sample(size, chunk_rng(seed, j))
        enc = codec.encode(x, cfg)
        ell = enc.e_max - cfg.q + 1
        sums = (np.ldexp(1.0, ell).sum(), np.ldexp(1.0, enc.e_max).sum())
        moments = {}
        for b in betas:
            c = cfg.with_beta(b)
            r = codec.decode(codec.dequantize(codec.quantize(enc.coeffs, c), c),
                             enc.e_max, enc.zero, c)
            moments[b] = RunningMoments(n).update(r - x)
        return sums, moments

    parts = _map_chunks(work, trials, chunk, threads)
    scale = sum(p[0][0] for p in parts) / trials
    top = sum(p[0][1] for p in parts) / trials
    report = BiasReport(source, cfg, seed, trials)
    for b in betas:
        acc = RunningMoments(n)
        for p in parts:
            acc.merge(p[1][b])
        c = cfg.with_beta(b)
        unit = sum(bias.unit_bias(c).values())
        predicted = np.array([float(v) for v in unit]) * scale
        report.results.append(BetaResult(b, acc.mean, predicted, acc.sem,
                                         top * 2.0 ** -cfg.k, trials))
    return report


# ---------------------------------------------------------------------------
# quantization-error distribution


@dataclass
class DistributionReport:
    beta: int
    eta: int
    ulp: float
    trials: int
    mean: np.ndarray  # in ulps
    variance: np.ndarray  # in ulps squared
    expected_mean: np.ndarray
    expected_variance: np.ndarray
    edges: list  # per element bin edges (ulps)
    counts: list  # per element histogram counts
    probabilities: list  # per element model bin probabilities

    def max_bin_z(self) -> float:
        """Largest |observed - expected| / binomial standard error over all bins."""
        worst = 0.0
        for cnt, p in zip(self.counts, self.probabilities):
            n = cnt.sum()
            se = np.sqrt(np.maximum(n * p * (1 - p), 1e-300))
            ok = p > 0
            worst = max(worst, float(np.max(np.abs(cnt[ok] - n * p[ok]) / se[ok])))
        return worst

    def to_dict(self) -> dict:
        return {
            "beta": self.beta, "eta": self.eta, "ulp": self.ulp, "trials": self.trials,
            "mean": self.mean.tolist(), "variance": self.variance.tolist(),
            "expected_mean": self.expected_mean.tolist(),
            "expected_variance": self.expected_variance.tolist(),
            "max_bin_z": self.max_bin_z(),
        }


def _density_bins(dens: bias.ErrorDensity, bins: int):
    lo, hi = (float(b) for b in dens.support)
    edges = np.linspace(lo, hi, bins + 1)
    cdf = dens.cdf(edges)
    return edges, np.diff(cdf)


def run_distribution_experiment(trials: int, seed: int, rounding=Rounding.NEVER,
                                tolerance: float = 2.0 ** -8, e_max: int = 8,
                                bins: int = 16, threads: int = 1,
                                chunk: int = CHUNK) -> DistributionReport:
    """Per-position error distribution of 1-d blocks with a fixed e_max.

    The precision is the smallest beta meeting ``tolerance`` for blocks
    whose largest magnitude lies in ``[2**e_max, 2**(e_max+1))``.  Errors
    are reported in units of the last retained plane.
    """
    base = CodecConfig(d=1, rounding=rounding)
    beta = codec.beta_for_tolerance(tolerance, e_max, base)
    cfg = base.with_beta(beta)
    ell = e_max - cfg.q + 1
    ulp = 2.0 ** (ell + cfg.eta + 1)
    source = SyntheticBlocks(d=1, e_min=e_max, rho=0, k=cfg.k)
    y_mean = (Fraction(-1) ** (cfg.eta + 1) / 6) if cfg.rounding is Rounding.NEVER else Fraction(0)
    densities = [bias.quantization_density(i, y_mean) for i in range(4)]
    binning = [_density_bins(dn, bins) for dn in densities]

    def work(j: int, size: int):
        x = source.sample(size, chunk_rng(seed, j))
        err = (codec.roundtrip(x, cfg) - x) / ulp
        hists = [np.histogram(err[:, i], bins=binning[i][0])[0] for i in range(4)]
        return RunningMoments(4).update(err), hists

    parts = _map_chunks(work, trials, chunk, threads)
    acc = RunningMoments(4)
    counts = [np.zeros(bins, dtype=np.int64) for _ in range(4)]
    for m, h in parts:
        acc.merge(m)
        for i in range(4):
            counts[i] += h[i]
    return DistributionReport(
        beta, cfg.eta, ulp, trials, acc.mean, acc.variance,
        np.array([float(dn.mean) for dn in densities]),
        np.array([float(dn.variance) for dn in densities]),
        [b[0] for b in binning], counts, [b[1] for b in binning])


# ---------------------------------------------------------------------------
# autocorrelation


def autocorrelation(field_values) -> np.ndarray:
    """Circular autocorrelation of a standardised field, zero lag centred.

    Computed as the inverse FFT of the power spectrum; the value at the
    centre index is 1.
    """
    f = np.asarray(field_values, dtype=np.float64)
    if f.size == 0:
        raise DegenerateField("empty field")
    sigma = f.std()
    if not sigma > 0:
        raise DegenerateField("field has zero variance")
    g = (f - f.mean()) / sigma
    spectrum = np.fft.fftn(g)
    r = np.real(np.fft.ifftn(spectrum * np.conj(spectrum))) / g.size
    return np.fft.fftshift(r)


def zero_lag_index(shape: Sequence[int]) -> tuple:
    return tuple(n // 2 for n in shape)


def time_slice(r: np.ndarray) -> np.ndarray:
    """Slice of the correlation at zero lag along the leading (time) axis."""
    return r[r.shape[0] // 2]


def error_field(source: SyntheticBlocks, cfg: CodecConfig, blocks_per_axis: int,
                seed: int) -> np.ndarray:
    """Reconstruction error of a grid tiled with independent synthetic blocks."""
    n_blocks = blocks_per_axis ** cfg.d
    x = source.sample(n_blocks, chunk_rng(seed, 0))
    shape = (4 * blocks_per_axis,) * cfg.d
    grid = codec.reassemble(x, shape, cfg.d)
    stream, _ = codec.compress_array(grid, cfg)
    return codec.decompress_array(stream, shape) - grid


def run_autocorrelation_experiment(source: SyntheticBlocks, cfg: CodecConfig,
                                   betas: Iterable[int], blocks_per_axis: int, seed: int,
                                   modes: Sequence = (Rounding.NEVER, Rounding.FIRST,
                                                      Rounding.LAST)) -> dict:
    """Frobenius norm of the error autocorrelation for each mode and beta."""
    out = {}
    for mode in modes:
        mode = Rounding(mode)
        out[mode.value] = {}
        for b in betas:
            c = cfg.with_beta(b).with_rounding(mode)
            r = autocorrelation(error_field(source, c, blocks_per_axis, seed))
            out[mode.value][int(b)] = float(np.linalg.norm(r))
    return out


# ---------------------------------------------------------------------------
# bit-plane statistics


@dataclass
class BitStats:
    """Frequency of one-bits by coefficient and bit index, per coefficient width."""

    widths: dict  # width -> (ones: (N, width) int array, totals: (N,) int array)

    def frequencies(self, width: int) -> np.ndarray:
        ones, totals = self.widths[width]
        with np.errstate(invalid="ignore", divide="ignore"):
            return ones / totals[:, None]

    def pooled(self, width: int) -> np.ndarray:
        """Per-bit frequency pooled over coefficients."""
        ones, totals = self.widths[width]
        return ones.sum(axis=0) / max(totals.sum(), 1)

    def to_dict(self) -> dict:
        return {str(w): {"count": int(t.sum()), "pooled": self.pooled(w).tolist()}
                for w, (o, t) in sorted(self.widths.items())}


def coefficient_bit_statistics(coeffs: np.ndarray) -> BitStats:
    """Bit frequencies of integer coefficients in negabinary.

    Coefficients are grouped by digit width; bit 0 is the least significant
    digit.  Rows of ``coeffs`` that are entirely zero are skipped.
    """
    from .bitplane import bit_length, int_to_negabinary

    coeffs = np.asarray(coeffs, dtype=np.int64)
    coeffs = coeffs[np.any(coeffs != 0, axis=1)]
    digits = int_to_negabinary(coeffs)
    widths = bit_length(digits)
    n = coeffs.shape[1]
    stats = {}
    for w in np.unique(widths):
        w = int(w)
        if w == 0:
            continue
        sel = widths == w
        bits = (digits[..., None] >> np.arange(w, dtype=np.uint64)) & np.uint64(1)
        ones = (bits * sel[..., None]).sum(axis=0).astype(np.int64)
        stats[w] = (ones.reshape(n, w), sel.sum(axis=0).astype(np.int64))
    return BitStats(stats)


def bitplane_statistics(blocks: np.ndarray, cfg: CodecConfig) -> BitStats:
    """Bit frequencies of transform coefficients, before truncation.

    Float blocks go through the shared-exponent step first; integer blocks
    are transformed directly.
    """
    blocks = np.asarray(blocks)
    if np.issubdtype(blocks.dtype, np.integer):
        from .transform import forward_lossy, sequency_permutation

        coeffs = forward_lossy(blocks, cfg.d)[..., sequency_permutation(cfg.d)]
    else:
        enc = codec.encode(blocks, cfg)
        coeffs = enc.coeffs[~enc.zero]
    return coefficient_bit_statistics(coeffs)


def run_bitstats(source: SyntheticBlocks, cfg: CodecConfig, trials: int, seed: int,
                 integers: bool = False) -> BitStats:
    """Bit statistics of synthetic float blocks, or of uniform q-bit integers."""
    rng = chunk_rng(seed, 0)
    if integers:
        lim = 1 << (cfg.q - 1)
        blocks = rng.integers(-lim, lim, size=(trials, cfg.block_size), endpoint=True)
    else:
        blocks = source.sample(trials, rng)
    return bitplane_statistics(blocks, cfg)

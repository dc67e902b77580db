"""Fixed-precision block codec.

The compression path for a block of ``4**d`` floats is: shared-exponent
conversion to q-bit integers, integer lifting transform, sequency
reordering, conversion to negabinary, and retention of the ``beta`` most
significant digit planes (indices ``q+1`` down to ``q+2-beta``).
Decompression reverses each step; the last one rounds every value to a
``k``-bit significand.

Batch functions work on arrays of shape ``(n_blocks, 4**d)``.  The
``trace_block`` function replays one block in exact rational arithmetic
and splits its error into per-step terms.
"""
from __future__ import annotations

import enum
import io
import struct
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import BinaryIO

import numpy as np

from . import transform as tf
from .bitplane import bit_length, int_to_negabinary, negabinary_to_int, truncate_planes
from .errors import ConfigError, ContainerError, NonFiniteInput


class Rounding(str, enum.Enum):
    NEVER = "never"
    FIRST = "first"  # offset added before truncation
    LAST = "last"  # offset added after decoding


@dataclass(frozen=True)
class CodecConfig:
    d: int = 1
    beta: int = 16
    k: int = 24
    q: int = 30
    rounding: Rounding = Rounding.NEVER

    def __post_init__(self):
        try:
            object.__setattr__(self, "rounding", Rounding(self.rounding))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.d not in (1, 2, 3):
            raise ConfigError(f"d must be 1, 2 or 3, got {self.d}")
        if not 1 <= self.k <= 53:
            raise ConfigError(f"k must lie in [1, 53], got {self.k}")
        if not self.k < self.q <= 62:
            raise ConfigError(f"q must satisfy k < q <= 62, got q={self.q}")
        if not 0 <= self.beta <= self.q + 2:
            raise ConfigError(f"beta must lie in [0, {self.q + 2}], got {self.beta}")

    @classmethod
    def single(cls, d=1, beta=16, rounding=Rounding.NEVER) -> "CodecConfig":
        return cls(d=d, beta=beta, k=24, q=30, rounding=rounding)

    @classmethod
    def double(cls, d=1, beta=32, rounding=Rounding.NEVER) -> "CodecConfig":
        return cls(d=d, beta=beta, k=53, q=62, rounding=rounding)

    @property
    def eta(self) -> int:
        """Highest discarded digit index (negative when nothing is discarded)."""
        return self.q + 1 - self.beta

    @property
    def block_size(self) -> int:
        return 4 ** self.d

    @property
    def n_planes(self) -> int:
        return self.q + 2

    @property
    def max_analysis_beta(self) -> int:
        return self.q - 2 * self.d + 2

    def with_beta(self, beta: int) -> "CodecConfig":
        return replace(self, beta=beta)

    def with_rounding(self, rounding) -> "CodecConfig":
        return replace(self, rounding=Rounding(rounding))


def rounding_offset(cfg: CodecConfig) -> int:
    """Integer offset that recentres the negabinary truncation error.

    Truncating digits 0..eta shifts values by (-2)**(eta+1)/6 on average,
    so the offset is the nearest integer to the negative of that.
    """
    if cfg.rounding is Rounding.NEVER or cfg.eta < 0:
        return 0
    return round(Fraction(-((-2) ** (cfg.eta + 1)), 6))


def beta_for_tolerance(tol: float, e_max: int, cfg: CodecConfig) -> int:
    """Smallest beta whose last-plane weight 2**(ell + q + 1 - beta) is <= tol."""
    if not tol > 0:
        raise ConfigError("tolerance must be positive")
    ell = e_max - cfg.q + 1
    # 2**(ell + q + 1 - beta) <= tol  <=>  beta >= ell + q + 1 - log2(tol)
    m, e = np.frexp(tol)
    floor_log2 = int(e) - 1  # tol in [2**floor_log2, 2**(floor_log2+1))
    beta = ell + cfg.q + 1 - floor_log2
    return int(min(max(beta, 0), cfg.q + 2))


# ---------------------------------------------------------------------------
# step 2: shared exponent


def _check_blocks(blocks, cfg: CodecConfig) -> np.ndarray:
    x = np.asarray(blocks, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != cfg.block_size:
        raise ConfigError(f"blocks need trailing length {cfg.block_size}, got {x.shape[-1]}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("block contains NaN or infinity")
    return x


def block_exponents(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-block e_max and a mask of all-zero blocks."""
    maxabs = np.max(np.abs(x), axis=-1)
    zero = maxabs == 0
    _, e = np.frexp(np.where(zero, 1.0, maxabs))
    return (e - 1).astype(np.int64), zero


def to_block_integers(x: np.ndarray, e_max: np.ndarray, q: int) -> np.ndarray:
    """Scale by 2**-ell and truncate toward zero."""
    ell = e_max - q + 1
    return np.trunc(np.ldexp(x, -ell[..., None])).astype(np.int64)


def round_significand(z: np.ndarray, k: int) -> np.ndarray:
    """Keep the top k significant bits of each integer, truncating toward zero.

    Returns float64; the kept value has at most 53 bits so the cast is exact.
    """
    z = np.asarray(z, dtype=np.int64)
    u = z.astype(np.uint64)
    neg = z < 0
    with np.errstate(over="ignore"):
        mag = np.where(neg, ~u + np.uint64(1), u)
    drop = np.maximum(bit_length(mag) - k, 0).astype(np.uint64)
    kept = (mag >> drop) << drop
    val = kept.astype(np.float64)
    return np.where(neg, -val, val)


def from_block_integers(z: np.ndarray, e_max: np.ndarray, cfg: CodecConfig) -> np.ndarray:
    ell = e_max - cfg.q + 1
    return np.ldexp(round_significand(z, cfg.k), ell[..., None])


# ---------------------------------------------------------------------------
# steps 3 through 8 and their inverses


@dataclass
class Encoded:
    """Transform coefficients in sequency order, before any truncation."""

    coeffs: np.ndarray
    e_max: np.ndarray
    zero: np.ndarray


def encode(blocks, cfg: CodecConfig) -> Encoded:
    x = _check_blocks(blocks, cfg)
    e_max, zero = block_exponents(x)
    w = to_block_integers(x, e_max, cfg.q)
    c = tf.forward_lossy(w, cfg.d)[..., tf.sequency_permutation(cfg.d)]
    return Encoded(c, e_max, zero)


def quantize(coeffs: np.ndarray, cfg: CodecConfig) -> np.ndarray:
    """Negabinary digits with planes 0..eta cleared."""
    off = rounding_offset(cfg) if cfg.rounding is Rounding.FIRST else 0
    nb = int_to_negabinary(coeffs + off if off else coeffs)
    return truncate_planes(nb, cfg.eta)


def dequantize(digits: np.ndarray, cfg: CodecConfig) -> np.ndarray:
    c = negabinary_to_int(digits)
    if cfg.rounding is Rounding.LAST:
        off = rounding_offset(cfg)
        if off:
            c = np.where(c != 0, c + off, c)
    return c


def decode(coeffs: np.ndarray, e_max: np.ndarray, zero: np.ndarray, cfg: CodecConfig) -> np.ndarray:
    c = np.asarray(coeffs, dtype=np.int64)[..., tf.inverse_sequency_permutation(cfg.d)]
    w = tf.backward_lossy(c, cfg.d)
    x = from_block_integers(w, e_max, cfg)
    x[zero] = 0.0
    return x


def roundtrip(blocks, cfg: CodecConfig) -> np.ndarray:
    """Compress and decompress blocks without building a bit stream."""
    enc = encode(blocks, cfg)
    return decode(dequantize(quantize(enc.coeffs, cfg), cfg), enc.e_max, enc.zero, cfg)


# ---------------------------------------------------------------------------
# bit planes


def _plane_indices(cfg: CodecConfig) -> np.ndarray:
    return np.arange(cfg.q + 1, cfg.eta, -1, dtype=np.uint64)


def digits_to_planes(digits: np.ndarray, cfg: CodecConfig) -> np.ndarray:
    """(n, N) uint64 digits -> (n, beta, N) bits, most significant plane first."""
    idx = _plane_indices(cfg)
    return ((digits[:, None, :] >> idx[None, :, None]) & np.uint64(1)).astype(np.uint8)


def planes_to_digits(planes: np.ndarray, cfg: CodecConfig) -> np.ndarray:
    idx = _plane_indices(cfg)
    bits = planes.astype(np.uint64) << idx[None, :, None]
    return np.bitwise_or.reduce(bits, axis=1) if planes.shape[1] else np.zeros(
        (planes.shape[0], planes.shape[2]), dtype=np.uint64)


@dataclass(frozen=True)
class CompressedBlock:
    e_max: int
    planes: tuple[int, ...]  # one int per plane; coefficient 0 is the top bit
    zero_flag: bool


@dataclass
class BlockStream:
    """Compressed blocks in array form."""

    cfg: CodecConfig
    e_max: np.ndarray
    zero: np.ndarray
    digits: np.ndarray  # (n, N) uint64 with discarded planes cleared

    def __len__(self) -> int:
        return len(self.e_max)

    def block(self, i: int) -> CompressedBlock:
        bits = digits_to_planes(self.digits[i:i + 1], self.cfg)[0]
        n = self.cfg.block_size
        weights = 1 << np.arange(n - 1, -1, -1, dtype=object)
        planes = tuple(int(np.dot(row.astype(object), weights)) for row in bits)
        return CompressedBlock(int(self.e_max[i]), planes, bool(self.zero[i]))


def compress_blocks(blocks, cfg: CodecConfig) -> BlockStream:
    enc = encode(blocks, cfg)
    digits = quantize(enc.coeffs, cfg)
    digits[enc.zero] = 0
    return BlockStream(cfg, enc.e_max, enc.zero, digits)


def decompress_blocks(stream: BlockStream) -> np.ndarray:
    cfg = stream.cfg
    return decode(dequantize(stream.digits, cfg), stream.e_max, stream.zero, cfg)


def compress(block, cfg: CodecConfig) -> CompressedBlock:
    """Compress a single block."""
    return compress_blocks(np.asarray(block, dtype=np.float64).reshape(1, -1), cfg).block(0)


def decompress(cb: CompressedBlock, cfg: CodecConfig) -> np.ndarray:
    if len(cb.planes) != cfg.beta:
        raise ContainerError(f"expected {cfg.beta} planes, got {len(cb.planes)}")
    n = cfg.block_size
    bits = np.array([[(p >> (n - 1 - j)) & 1 for j in range(n)] for p in cb.planes],
                    dtype=np.uint8).reshape(1, cfg.beta, n)
    digits = planes_to_digits(bits, cfg)
    stream = BlockStream(cfg, np.array([cb.e_max]), np.array([cb.zero_flag]), digits)
    return decompress_blocks(stream)[0]


# ---------------------------------------------------------------------------
# arrays <-> blocks


def partition(array, d: int) -> tuple[np.ndarray, tuple[int, ...]]:
    """Split a d-dimensional array into blocks, replicating edge samples.

    Returns ``(blocks, block_grid)`` with blocks in row-major order over
    the block grid.
    """
    a = np.asarray(array, dtype=np.float64)
    if a.ndim != d:
        raise ConfigError(f"array has {a.ndim} dimensions, codec expects {d}")
    if a.size == 0:
        raise ConfigError("empty array")
    pad = [(0, (-n) % 4) for n in a.shape]
    a = np.pad(a, pad, mode="edge")
    grid = tuple(n // 4 for n in a.shape)
    split = a.reshape(sum(((g, 4) for g in grid), ()))
    order = tuple(range(0, 2 * d, 2)) + tuple(range(1, 2 * d, 2))
    return split.transpose(order).reshape(-1, 4 ** d), grid


def reassemble(blocks: np.ndarray, shape: tuple[int, ...], d: int) -> np.ndarray:
    grid = tuple(-(-n // 4) for n in shape)
    split = np.asarray(blocks).reshape(grid + (4,) * d)
    order = sum(((i, d + i) for i in range(d)), ())
    full = split.transpose(order).reshape(tuple(4 * g for g in grid))
    return full[tuple(slice(0, n) for n in shape)]


def compress_array(array, cfg: CodecConfig) -> tuple[BlockStream, tuple[int, ...]]:
    a = np.asarray(array)
    if not np.all(np.isfinite(a)):
        raise NonFiniteInput("array contains NaN or infinity")
    blocks, _ = partition(a, cfg.d)
    return compress_blocks(blocks, cfg), a.shape


def decompress_array(stream: BlockStream, shape: tuple[int, ...]) -> np.ndarray:
    return reassemble(decompress_blocks(stream), shape, stream.cfg.d)


# ---------------------------------------------------------------------------
# container file

MAGIC = b"ZBLB"
VERSION = 1
_HEADER = struct.Struct("<4sBBBBHB3Q")
_ROUNDING_CODES = {Rounding.NEVER: 0, Rounding.FIRST: 1, Rounding.LAST: 2}


def _record_dtype(cfg: CodecConfig) -> np.dtype:
    nbytes = -(-cfg.beta * cfg.block_size // 8)
    return np.dtype([("zero", "u1"), ("e_max", "<i2"), ("planes", "u1", (nbytes,))])


def write_container(fh: BinaryIO | str | Path, stream: BlockStream, shape) -> int:
    """Write header and block records; returns the number of bytes written."""
    cfg = stream.cfg
    dims = list(shape) + [1] * (3 - len(shape))
    header = _HEADER.pack(MAGIC, VERSION, cfg.d, cfg.k, cfg.q, cfg.beta,
                          _ROUNDING_CODES[cfg.rounding], *dims)
    rec = np.zeros(len(stream), dtype=_record_dtype(cfg))
    rec["zero"] = stream.zero
    if np.any(np.abs(stream.e_max) > 32767):
        raise ContainerError("block exponent does not fit in 16 bits")
    rec["e_max"] = stream.e_max
    if cfg.beta:
        bits = digits_to_planes(stream.digits, cfg).reshape(len(stream), -1)
        rec["planes"] = np.packbits(bits, axis=1)
    payload = header + rec.tobytes()
    if isinstance(fh, (str, Path)):
        Path(fh).write_bytes(payload)
    else:
        fh.write(payload)
    return len(payload)


def read_container(fh: BinaryIO | str | Path) -> tuple[BlockStream, tuple[int, ...]]:
    raw = Path(fh).read_bytes() if isinstance(fh, (str, Path)) else fh.read()
    if len(raw) < _HEADER.size:
        raise ContainerError("file too short for a header")
    magic, version, d, k, q, beta, rcode, *dims = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ContainerError("bad magic; not a block container")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    codes = {v: r for r, v in _ROUNDING_CODES.items()}
    if rcode not in codes:
        raise ContainerError(f"unknown rounding code {rcode}")
    try:
        cfg = CodecConfig(d=d, beta=beta, k=k, q=q, rounding=codes[rcode])
    except ConfigError as exc:
        raise ContainerError(f"invalid header: {exc}") from None
    shape = tuple(int(n) for n in dims[:d])
    n_blocks = int(np.prod([-(-n // 4) for n in shape]))
    dt = _record_dtype(cfg)
    body = raw[_HEADER.size:]
    if len(body) != n_blocks * dt.itemsize:
        raise ContainerError("record section length does not match header")
    rec = np.frombuffer(body, dtype=dt)
    if cfg.beta:
        bits = np.unpackbits(rec["planes"], axis=1)[:, :cfg.beta * cfg.block_size]
        digits = planes_to_digits(bits.reshape(n_blocks, cfg.beta, cfg.block_size), cfg)
    else:
        digits = np.zeros((n_blocks, cfg.block_size), dtype=np.uint64)
    stream = BlockStream(cfg, rec["e_max"].astype(np.int64), rec["zero"].astype(bool), digits)
    return stream, shape


def container_bytes(stream: BlockStream, shape) -> bytes:
    buf = io.BytesIO()
    write_container(buf, stream, shape)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# exact single-block trace


def _fl_exact(v: Fraction, k: int) -> Fraction:
    if v == 0:
        return Fraction(0)
    mag = abs(v)
    e = mag.numerator.bit_length() - mag.denominator.bit_length()
    if mag < Fraction(2) ** e:
        e -= 1
    scale = Fraction(2) ** (k - 1 - e)
    kept = Fraction(int(mag * scale)) / scale
    return kept if v > 0 else -kept


@dataclass
class BlockTrace:
    """Exact intermediates of one block and its per-step error terms."""

    cfg: CodecConfig
    x: np.ndarray
    e_max: int
    ell: int
    w: np.ndarray
    coeffs: np.ndarray  # lossy transform output, natural order
    quantized: np.ndarray  # after truncation (and rounding), natural order
    z: np.ndarray  # exact backward transform of the quantized coefficients
    reconstruction: np.ndarray
    terms: dict = field(default_factory=dict)

    @property
    def total_error(self) -> np.ndarray:
        return self.reconstruction - self.x

    @property
    def term_sum(self) -> np.ndarray:
        return sum(self.terms.values())


def trace_block(block, cfg: CodecConfig) -> BlockTrace:
    """Replay one block in rational arithmetic.

    The decompression path here uses the exact backward matrix, so the
    four terms in ``terms`` telescope to the total error exactly:

    * ``decode_rounding``: k-bit rounding of the reconstructed values
    * ``truncation``: plane truncation (including any rounding offset)
    * ``transform``: integer lifting versus the exact forward matrix
    * ``block_float``: truncation to q-bit block integers
    """
    x = _check_blocks(block, cfg)[0]
    if not np.any(x):
        raise ConfigError("trace needs a non-zero block")
    e_max, _ = block_exponents(x[None])
    e_max = int(e_max[0])
    ell = e_max - cfg.q + 1
    d, perm, inv = cfg.d, tf.sequency_permutation(cfg.d), tf.inverse_sequency_permutation(cfg.d)
    scale = Fraction(2) ** ell

    xf = np.array([Fraction(float(v)) for v in x], dtype=object)
    w = to_block_integers(x[None], np.array([e_max]), cfg.q)[0]
    lossy = tf.forward_lossy(w, d)
    y = lossy[perm]
    qy = dequantize(quantize(y, cfg), cfg)

    def back(v_seq):  # D2 D3 D4 D5 on a sequency-ordered vector
        return tf.backward_exact(np.asarray(v_seq, dtype=object)[inv], d) * scale

    z = tf.backward_exact(np.asarray(qy, dtype=object)[inv], d)
    recon = np.array([_fl_exact(v, cfg.k) for v in z], dtype=object) * scale
    c2_exact = xf / scale
    terms = {
        "decode_rounding": recon - z * scale,
        "truncation": back(qy.astype(object) - y.astype(object)),
        "transform": back((lossy.astype(object) - tf.forward_exact(w, d))[perm]),
        "block_float": back(tf.forward_exact(w.astype(object) - c2_exact, d)[perm]),
    }
    return BlockTrace(cfg, xf, e_max, ell, w, lossy, qy[inv], z, recon, terms)

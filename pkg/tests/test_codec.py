import io
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zfpbias import codec
from zfpbias.codec import CodecConfig, Rounding
from zfpbias.errors import ConfigError, ContainerError, NonFiniteInput
from zfpbias.harness import SyntheticBlocks, chunk_rng


def f32_blocks(n, d, seed, spread=4.0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 4 ** d)) * np.exp2(rng.uniform(-spread, spread, size=(n, 1)))
    return x.astype(np.float32).astype(np.float64)


def eps(k):
    return 2.0 ** (1 - k)


def test_config_validation():
    with pytest.raises(ConfigError):
        CodecConfig(d=4)
    with pytest.raises(ConfigError):
        CodecConfig(k=30, q=30)
    with pytest.raises(ConfigError):
        CodecConfig(beta=33)
    with pytest.raises(ConfigError):
        CodecConfig(rounding="sometimes")
    cfg = CodecConfig(beta=20)
    assert cfg.eta == 11 and cfg.max_analysis_beta == 30 and cfg.n_planes == 32


def test_rounding_offset():
    assert codec.rounding_offset(CodecConfig(beta=28, rounding="first")) == -3  # eta = 3
    assert codec.rounding_offset(CodecConfig(beta=27, rounding="first")) == 5  # eta = 4
    assert codec.rounding_offset(CodecConfig(beta=28)) == 0
    assert codec.rounding_offset(CodecConfig(beta=32, rounding="last")) == 0
    for beta in range(0, 32):
        cfg = CodecConfig(beta=beta, rounding="first")
        exact = -Fraction((-2) ** (cfg.eta + 1), 6)
        assert abs(codec.rounding_offset(cfg) - exact) <= Fraction(1, 2)


def test_beta_for_tolerance():
    cfg = CodecConfig()
    assert codec.beta_for_tolerance(2.0 ** -8, 8, cfg) == 18
    assert codec.beta_for_tolerance(2.0 ** -9, 8, cfg) == 19
    assert codec.beta_for_tolerance(2.0 ** 10, 8, cfg) == 0
    assert codec.beta_for_tolerance(1e-300, 8, cfg) == cfg.q + 2
    with pytest.raises(ConfigError):
        codec.beta_for_tolerance(0.0, 8, cfg)


@given(st.floats(1e-12, 1e6), st.integers(-30, 30))
def test_beta_for_tolerance_is_smallest(tol, e_max):
    cfg = CodecConfig()
    beta = codec.beta_for_tolerance(tol, e_max, cfg)
    ell = e_max - cfg.q + 1

    def ok(b):
        return 2.0 ** (ell + cfg.q + 1 - b) <= tol

    if 0 < beta < cfg.q + 2:
        assert ok(beta) and not ok(beta - 1)


def test_step2_examples():
    x = np.ones((1, 4))
    e_max, zero = codec.block_exponents(x)
    assert e_max[0] == 0 and not zero[0]
    w = codec.to_block_integers(x, e_max, 30)
    assert np.all(w == 2 ** 29)
    # an exponent range wider than q wipes out the small values
    x = np.array([[1.0, 2.0 ** -40, 0.5, -0.25]])
    w = codec.to_block_integers(x, codec.block_exponents(x)[0], 30)
    assert w[0, 1] == 0


def test_round_significand():
    z = np.array([(1 << 29) + 63, -((1 << 29) + 63), 5, 0])
    out = codec.round_significand(z, 24)
    assert out.tolist() == [float(1 << 29), -float(1 << 29), 5.0, 0.0]


@pytest.mark.parametrize("d", [1, 2, 3])
def test_step2_bound(d):
    x = f32_blocks(20_000 if d < 3 else 3000, d, d)
    e_max, _ = codec.block_exponents(x)
    w = codec.to_block_integers(x, e_max, 30)
    back = np.ldexp(w.astype(np.float64), (e_max - 29)[:, None])
    assert np.all(np.abs(back - x).max(axis=1) <= eps(30) * np.abs(x).max(axis=1))


def test_step2_decode_mean_zero_for_symmetric_input():
    rng = np.random.default_rng(3)
    z = rng.integers(2 ** 26, 2 ** 30, size=400_000) * rng.choice([-1, 1], size=400_000)
    err = codec.round_significand(z, 24) - z
    assert abs(err.mean()) < 4 * err.std() / np.sqrt(err.size)
    # one-sided input is biased toward zero
    pos = np.abs(z)
    assert (codec.round_significand(pos, 24) - pos).mean() < -1


def test_partition_examples():
    blocks, grid = codec.partition(np.zeros((10, 10)), 2)
    assert grid == (3, 3) and blocks.shape == (9, 16)
    blocks, grid = codec.partition(np.arange(16.0).reshape(4, 4), 2)
    assert grid == (1, 1) and blocks[0].tolist() == list(range(16))
    # edge replication fills the padding
    blocks, _ = codec.partition(np.arange(5.0), 1)
    assert blocks[1].tolist() == [4.0, 4.0, 4.0, 4.0]
    with pytest.raises(NonFiniteInput):
        codec.compress_array(np.array([1.0, np.nan]), CodecConfig())


@pytest.mark.parametrize("shape", [(7, 13), (13,), (5, 6, 9)])
def test_reassemble_partition(shape):
    a = np.random.default_rng(0).normal(size=shape)
    blocks, _ = codec.partition(a, len(shape))
    assert np.array_equal(codec.reassemble(blocks, shape, len(shape)), a)


def test_zero_block_and_zero_beta():
    cfg = CodecConfig(d=2)
    out = codec.roundtrip(np.zeros((3, 16)), cfg)
    assert np.all(out == 0)
    x = f32_blocks(50, 2, 1)
    assert np.all(codec.roundtrip(x, cfg.with_beta(0)) == 0)


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("rounding", list(Rounding))
def test_full_precision_within_eps_k(d, rounding):
    cfg = CodecConfig(d=d, beta=32, rounding=rounding)
    x = f32_blocks(2000, d, 7)
    err = np.abs(codec.roundtrip(x, cfg) - x).max(axis=1)
    assert np.all(err <= eps(24) * np.abs(x).max(axis=1))


def test_constant_block_near_lossless():
    x = np.full((1, 16), 3.25)
    for beta in range(6, 33):
        out = codec.roundtrip(x, CodecConfig(d=2, beta=beta))
        assert np.max(np.abs(out - x)) <= eps(24) * 3.25


def test_first_mode_without_truncation_is_identity():
    x = f32_blocks(200, 1, 9)
    a = codec.roundtrip(x, CodecConfig(beta=32))
    for mode in ("first", "last"):
        assert np.array_equal(codec.roundtrip(x, CodecConfig(beta=32, rounding=mode)), a)


def test_last_offset_only_on_nonzero():
    cfg = CodecConfig(beta=10, rounding="last")
    digits = codec.quantize(np.array([[0, 5, 1 << 25, -(1 << 25)]]), cfg)
    c = codec.dequantize(digits, cfg)
    assert c[0, 0] == 0 and c[0, 1] == 0
    off = codec.rounding_offset(cfg)
    plain = codec.dequantize(digits, cfg.with_rounding("never"))
    assert np.array_equal(c[0, 2:], plain[0, 2:] + off)


@pytest.mark.parametrize("eta", [3, 4, 9, 10])
def test_rounded_truncation_band_is_centred(eta):
    rng = np.random.default_rng(eta)
    a = rng.integers(2 ** 20, 2 ** 24, size=200_000) * rng.choice([-1, 1], size=200_000)
    cfg = CodecConfig(beta=31 - eta, rounding="first")
    err = codec.dequantize(codec.quantize(a, cfg), cfg) - a
    half = 2 ** eta
    assert err.min() >= -half - 1 and err.max() <= half + 1
    assert abs(err.mean()) < 1.0


@pytest.mark.parametrize("d", [1, 2, 3])
def test_energy_error_monotone_mid_range(d):
    rng = np.random.default_rng(d)
    shape = {1: (400,), 2: (40, 40), 3: (12, 12, 12)}[d]
    a = (rng.normal(size=shape) * np.exp(rng.normal(size=shape))).astype(np.float32).astype(float)
    for mode in Rounding:
        energy = []
        for beta in range(2 * d + 4, 27):
            cfg = CodecConfig(d=d, beta=beta, rounding=mode)
            stream, shp = codec.compress_array(a, cfg)
            energy.append(((codec.decompress_array(stream, shp) - a) ** 2).sum())
        assert np.all(np.diff(energy) <= 0)


def test_per_block_error_is_not_monotone_in_beta():
    # negabinary prefixes can overshoot: 6 = 16 - 8 - 2 keeps 8, then 16, then 0
    from zfpbias.bitplane import int_to_negabinary, negabinary_to_int, truncate_planes

    u = int_to_negabinary(np.array([6]))
    errs = [abs(int(negabinary_to_int(truncate_planes(u, eta))[0]) - 6) for eta in (1, 2, 3, 4)]
    assert errs == [2, 2, 10, 6]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from([1, 2, 3]), st.integers(0, 32),
       st.sampled_from(list(Rounding)))
def test_compress_decompress_single_block(seed, d, beta, rounding):
    cfg = CodecConfig(d=d, beta=beta, rounding=rounding)
    x = f32_blocks(1, d, seed)[0]
    cb = codec.compress(x, cfg)
    assert len(cb.planes) == beta
    assert all(p < 2 ** cfg.block_size for p in cb.planes)
    assert np.array_equal(codec.decompress(cb, cfg), codec.roundtrip(x[None], cfg)[0])
    assert codec.compress(x, cfg) == cb


@pytest.mark.parametrize("shape,beta", [((37,), 12), ((9, 10), 20), ((5, 6, 7), 3), ((8, 8), 0)])
def test_container_roundtrip(shape, beta):
    a = np.random.default_rng(1).normal(size=shape).astype(np.float32).astype(float)
    a.flat[0] = 0.0
    cfg = CodecConfig(d=len(shape), beta=beta, rounding="last")
    stream, shp = codec.compress_array(a, cfg)
    buf = io.BytesIO()
    n = codec.write_container(buf, stream, shp)
    raw = buf.getvalue()
    assert n == len(raw) and raw[:4] == b"ZBLB"
    assert codec.container_bytes(stream, shp) == raw
    back, shp2 = codec.read_container(io.BytesIO(raw))
    assert shp2 == shape and back.cfg == cfg
    assert np.array_equal(back.digits, stream.digits)
    assert np.array_equal(codec.decompress_array(back, shp2), codec.decompress_array(stream, shp))


def test_container_layout():
    cfg = CodecConfig(d=1, beta=12)
    stream, shp = codec.compress_array(np.arange(1.0, 9.0), cfg)
    raw = codec.container_bytes(stream, shp)
    header = 4 + 4 + 2 + 1 + 24
    per_block = 1 + 2 + (12 * 4 + 7) // 8
    assert len(raw) == header + 2 * per_block


def test_container_rejects_garbage():
    with pytest.raises(ContainerError):
        codec.read_container(io.BytesIO(b"nope"))
    with pytest.raises(ContainerError):
        codec.read_container(io.BytesIO(b"XXXX" + bytes(40)))
    cfg = CodecConfig(beta=8)
    stream, shp = codec.compress_array(np.ones(8), cfg)
    raw = codec.container_bytes(stream, shp)
    with pytest.raises(ContainerError):
        codec.read_container(io.BytesIO(raw[:-1]))


def test_determinism():
    cfg = CodecConfig(d=2, beta=14, rounding="first")
    a = np.random.default_rng(2).normal(size=(17, 9))
    b1 = codec.container_bytes(*codec.compress_array(a, cfg))
    b2 = codec.container_bytes(*codec.compress_array(a.copy(), cfg))
    assert b1 == b2


@pytest.mark.parametrize("d", [1, 2, 3])
def test_trace_identity_and_lossy_agreement(d):
    source = SyntheticBlocks(d=d, rho=6)
    x = source.sample(40 if d < 3 else 10, chunk_rng(5, 0))
    for beta in (2 * d, 10, 30 - 2 * d):
        cfg = CodecConfig(d=d, beta=beta)
        lossy = codec.roundtrip(x, cfg)
        for i, block in enumerate(x):
            tr = codec.trace_block(block, cfg)
            assert np.all(tr.term_sum == tr.total_error)
            # with >= 2d planes discarded the bit-arithmetic decode is exact
            assert np.all(tr.reconstruction == np.array([Fraction(v) for v in lossy[i]], dtype=object))


def test_trace_rejects_zero_block():
    with pytest.raises(ConfigError):
        codec.trace_block(np.zeros(4), CodecConfig())

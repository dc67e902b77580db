import csv
import io
import json
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zfpbias import harness
from zfpbias.codec import CodecConfig, Rounding
from zfpbias.errors import ConfigError, DegenerateField
from zfpbias.harness import RunningMoments, SyntheticBlocks, chunk_rng


def direct_autocorrelation(f):
    """O(n^2) circular correlation of the standardised field, zero lag centred."""
    g = (f - f.mean()) / f.std()
    out = np.empty(g.shape)
    for lag in product(*(range(n) for n in g.shape)):
        out[lag] = np.sum(g * np.roll(g, tuple(-s for s in lag), axis=tuple(range(g.ndim))))
    return np.fft.fftshift(out / g.size)


def test_generator_ranges():
    for d, rho in ((1, 0), (1, 7), (2, 3), (3, 14)):
        src = SyntheticBlocks(d=d, rho=rho, e_min=-20)
        x = src.sample(4000, chunk_rng(0, 0))
        assert x.shape == (4000, 4 ** d)
        mag = np.abs(x)
        assert mag.min() >= 2.0 ** -20 and mag.max() <= 2.0 ** (-20 + rho + 1)
        assert np.array_equal(x, x.astype(np.float32))
        assert 0.45 < (x > 0).mean() < 0.55
        # one value per log-spaced piece
        edges = -20 + (rho + 1) * np.arange(4 ** d + 1) / 4 ** d
        idx = np.searchsorted(edges, np.log2(mag), side="right") - 1
        idx = np.clip(idx, 0, 4 ** d - 1)
        assert np.all(np.sort(idx, axis=1) == np.arange(4 ** d))


def test_generator_rho_zero_single_binade():
    x = SyntheticBlocks(d=1, rho=0).sample(10_000, chunk_rng(1, 0))
    _, e = np.frexp(np.abs(x))
    assert np.all(e - 1 == -20)


@pytest.mark.parametrize("d,rho", [(1, 0), (1, 7), (2, 7), (3, 14)])
def test_top_binade_probability(d, rho):
    src = SyntheticBlocks(d=d, rho=rho)
    x = src.sample(50_000, chunk_rng(2, 0))
    _, e = np.frexp(np.abs(x).max(axis=1))
    hit = np.mean(e - 1 == src.e_min + rho)
    p = src.top_binade_probability()
    assert abs(hit - p) < 4 * np.sqrt(p * (1 - p) / x.shape[0]) + 1e-12


def test_generator_is_seeded():
    src = SyntheticBlocks(d=2, rho=5)
    assert np.array_equal(src.sample(100, chunk_rng(3, 1)), src.sample(100, chunk_rng(3, 1)))
    assert not np.array_equal(src.sample(100, chunk_rng(3, 1)), src.sample(100, chunk_rng(3, 2)))


def test_generator_rejects_bad_params():
    with pytest.raises(ConfigError):
        SyntheticBlocks(d=5)
    with pytest.raises(ConfigError):
        SyntheticBlocks(rho=-1)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 2000), st.integers(1, 300), st.integers(0, 2 ** 20))
def test_running_moments_match_two_pass(n, split, seed):
    rng = np.random.default_rng(seed)
    data = rng.normal(3.0, 2.0, size=(n, 4)) * rng.uniform(0.5, 5)
    acc = RunningMoments(4)
    for s in range(0, n, split):
        acc.merge(RunningMoments(4).update(data[s:s + split]))
    assert acc.count == n
    assert np.allclose(acc.mean, data.mean(axis=0), rtol=1e-12, atol=0)
    if n > 1:
        assert np.allclose(acc.variance, data.var(axis=0, ddof=1), rtol=1e-12, atol=0)


def test_running_moments_spot_check():
    data = np.random.default_rng(9).normal(size=(10_000, 3))
    acc = RunningMoments(3).update(data[:3000]).update(data[3000:])
    assert np.allclose(acc.mean, data.mean(axis=0), rtol=1e-12)
    assert np.allclose(acc.variance, data.var(axis=0, ddof=1), rtol=1e-12)
    assert np.allclose(acc.sem, data.std(axis=0, ddof=1) / 100, rtol=1e-12)


def _small_report(threads=1, chunk=1000, **kw):
    cfg = CodecConfig(d=1, rounding=kw.pop("rounding", "never"))
    src = SyntheticBlocks(d=1, rho=kw.pop("rho", 0))
    return harness.run_bias_experiment(src, cfg, [12, 13, 20], 5000, seed=11,
                                       threads=threads, chunk=chunk)


def test_bias_report_deterministic_and_thread_independent():
    a = _small_report()
    b = _small_report(threads=3)
    assert a.to_csv() == b.to_csv() and a.to_json() == b.to_json()
    c = harness.run_bias_experiment(SyntheticBlocks(), CodecConfig(), [12], 5000, seed=12, chunk=1000)
    assert c.by_beta()[12].measured.tolist() != a.by_beta()[12].measured.tolist()


def test_bias_report_schema():
    rep = _small_report()
    text = rep.to_csv()
    assert text.splitlines()[0] == ",".join(harness.CSV_FIELDS)
    assert text.splitlines()[0] == ("schema_version,d,rho,e_min,rounding,seed,beta,element,"
                                    "measured,predicted,ratio,relative_error,sem,masked,floor,trials")
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 3 * 4
    assert rows[0]["seed"] == "11" and rows[0]["schema_version"] == "1"
    js = json.loads(rep.to_json())
    assert set(js) == {"schema_version", "config", "source", "seed", "trials", "results"}
    assert set(js["results"][0]) == {"beta", "measured", "predicted", "ratio", "relative_error",
                                     "sem", "masked", "floor", "trials"}
    assert set(js["source"]) == {"d", "e_min", "rho", "k"}


def test_bias_experiment_sign_alternates_with_parity():
    rep = harness.run_bias_experiment(SyntheticBlocks(), CodecConfig(), range(10, 18), 20_000,
                                      seed=1)
    signs = np.array([np.sign(r.measured) for r in rep.results])
    # element 0 follows the truncation term, which flips with each extra plane
    assert np.all(signs[1:, 0] == -signs[:-1, 0])
    pred = np.array([np.sign(r.predicted) for r in rep.results])
    assert np.array_equal(signs[:, 0], pred[:, 0])


def test_bias_experiment_matches_prediction_mid_beta():
    rep = harness.run_bias_experiment(SyntheticBlocks(rho=7), CodecConfig(), [14, 15], 100_000,
                                      seed=5)
    for r in rep.results:
        ok = ~r.masked
        assert np.all(np.abs(r.ratio[ok] - 1) < 0.04)


def test_rounding_shrinks_mean_error():
    never = harness.run_bias_experiment(SyntheticBlocks(), CodecConfig(), [14], 50_000, seed=3)
    first = harness.run_bias_experiment(SyntheticBlocks(), CodecConfig(rounding="first"), [14],
                                        50_000, seed=3)
    assert np.all(np.abs(first.results[0].measured) * 10 < np.abs(never.results[0].measured))


def test_bias_experiment_validates():
    with pytest.raises(ConfigError):
        harness.run_bias_experiment(SyntheticBlocks(d=2), CodecConfig(d=1), [10], 10, seed=0)
    with pytest.raises(ConfigError):
        harness.run_bias_experiment(SyntheticBlocks(), CodecConfig(), [40], 10, seed=0)


def test_distribution_experiment():
    rep = harness.run_distribution_experiment(60_000, seed=2, chunk=10_000)
    assert rep.beta == 18
    assert np.allclose(rep.variance, rep.expected_variance, rtol=0.05)
    assert rep.max_bin_z() < 5
    again = harness.run_distribution_experiment(60_000, seed=2, threads=2, chunk=10_000)
    assert np.array_equal(rep.mean, again.mean)
    unb = harness.run_distribution_experiment(60_000, seed=2, rounding="first", chunk=10_000)
    sem = np.sqrt(unb.variance / unb.trials)
    assert np.all(np.abs(unb.mean) < 4 * sem + 0.01)


@pytest.mark.parametrize("shape", [(50,), (8, 12), (6, 5, 7)])
def test_autocorrelation_matches_direct(shape):
    f = np.random.default_rng(0).normal(size=shape)
    r = harness.autocorrelation(f)
    assert r[harness.zero_lag_index(shape)] == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(r - direct_autocorrelation(f))) < 1e-9


def test_autocorrelation_spike():
    f = np.zeros(32)
    f[5] = 1.0
    r = harness.autocorrelation(f)
    off = -1 / 31  # standardised spike: (n*delta - 1)/(n - 1) correlation
    expected = np.full(32, off)
    expected[16] = 1.0
    assert np.allclose(r, expected, atol=1e-12)


def test_autocorrelation_white_noise():
    f = np.random.default_rng(4).normal(size=(64, 64))
    r = harness.autocorrelation(f)
    centre = harness.zero_lag_index(r.shape)
    mask = np.ones(r.shape, bool)
    mask[centre] = False
    assert np.max(np.abs(r[mask])) <= 5 / np.sqrt(f.size)
    assert harness.time_slice(r).shape == (64,)


def test_autocorrelation_degenerate():
    with pytest.raises(DegenerateField):
        harness.autocorrelation(np.ones((4, 4)))


def test_error_field_and_experiment():
    src = SyntheticBlocks(d=2, rho=7)
    cfg = CodecConfig(d=2)
    f = harness.error_field(src, cfg, 8, seed=1)
    assert f.shape == (32, 32)
    out = harness.run_autocorrelation_experiment(src, cfg, [12, 16], 8, seed=1)
    assert set(out) == {"never", "first", "last"}
    assert all(v >= 1.0 for mode in out.values() for v in mode.values())


def test_bitstats_integers_are_random_beyond_top_bits():
    cfg = CodecConfig(d=1)
    stats = harness.run_bitstats(SyntheticBlocks(), cfg, 40_000, seed=1, integers=True)
    width = max(stats.widths, key=lambda w: stats.widths[w][1].sum())
    freq = stats.pooled(width)
    assert np.all(np.abs(freq[: width - 3] - 0.5) < 0.1)
    assert np.all(np.abs(freq[: width - 6] - 0.5) < 0.02)
    assert freq[width - 1] == 1.0  # the leading digit is set by definition


def test_bitstats_trailing_zeros_for_narrow_range():
    cfg = CodecConfig(d=1)
    stats = harness.run_bitstats(SyntheticBlocks(rho=0), cfg, 20_000, seed=2)
    width = max(stats.widths, key=lambda w: stats.widths[w][1].sum())
    freq = stats.pooled(width)
    # k < q leaves low digits mostly clear
    assert freq[0] < 0.45 and np.mean(freq[width // 2: width - 3]) > freq[0]


def test_bitstats_excludes_zero_blocks():
    coeffs = np.array([[0, 0, 0, 0], [3, 0, 1, 0]])
    stats = harness.coefficient_bit_statistics(coeffs)
    assert sum(int(t.sum()) for _, t in stats.widths.values()) == 2

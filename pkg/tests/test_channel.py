import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from transbeam.channel import (Batch, SystemConfig, load_batch, make_batch, sample_channel,
                               save_batch)
from transbeam.errors import ConfigError, EmptyBatchError, ParseError


def test_snr_bookkeeping():
    cfg = SystemConfig.from_snr(4, 4, 10.0)
    assert abs(cfg.sigma2 - 0.1) < 1e-15
    assert abs(cfg.snr_db - 10.0) <= 1e-9
    cfg = SystemConfig(2, 3, P=2.0, sigma_H2=0.5, sigma2=0.25)
    assert abs(cfg.snr_db - 10 * np.log10(4.0)) <= 1e-9


@pytest.mark.parametrize("field,kw", [
    ("K/N", {"K": 0, "N": 2}), ("P", {"K": 2, "N": 2, "P": 0.0}),
    ("sigma2", {"K": 2, "N": 2, "sigma2": -1.0}), ("sigma_H2", {"K": 2, "N": 2, "sigma_H2": 0.0}),
    ("normalization", {"K": 2, "N": 2, "normalization": "bogus"}),
])
def test_config_validation_names_field(field, kw):
    with pytest.raises(ConfigError) as exc:
        SystemConfig(**kw)
    assert exc.value.field == field


def test_entry_variance_monte_carlo():
    K, N = 2, 3
    cfg = SystemConfig(K, N, sigma_H2=1.0)
    n = 100_000 // (K * N) + 1
    h = make_batch(cfg, 7, n).h_raw
    var = np.mean(np.abs(h) ** 2)
    target = cfg.sigma_H2 / (N * K)
    assert 0.97 * target <= var <= 1.03 * target
    frob = np.mean(np.sum(np.abs(h) ** 2, axis=(1, 2)))
    assert abs(frob - cfg.sigma_H2) < 0.03


def test_real_parts_pass_ks():
    cfg = SystemConfig(2, 2, sigma_H2=1.0)
    h = make_batch(cfg, 3, 2500).h_raw
    x = h.real.ravel()[:10_000]
    sd = np.sqrt(cfg.sigma_H2 / (2 * cfg.N * cfg.K))
    assert stats.kstest(x, "norm", args=(0.0, sd)).pvalue > 0.01


def test_stream_layout_is_documented_philox():
    cfg = SystemConfig(2, 3, sigma_H2=2.0)
    z = np.random.Generator(np.random.Philox(key=5 + 2**64 * 4)).standard_normal(12)
    expect = np.sqrt(2.0 / 12) * (z[:6] + 1j * z[6:])
    assert np.array_equal(sample_channel(cfg, 5, 4).h_raw, expect.reshape(2, 3))


def test_determinism_and_distinct_seeds():
    cfg = SystemConfig(4, 4)
    a, b = sample_channel(cfg, 11), sample_channel(cfg, 11)
    assert np.array_equal(a.h_raw, b.h_raw)
    assert not np.array_equal(a.h_raw, sample_channel(cfg, 12).h_raw)
    assert np.array_equal(make_batch(cfg, 11, 3).h_raw[0], a.h_raw)


def test_batch_slices_agree_with_offsets():
    cfg = SystemConfig(3, 3)
    full = make_batch(cfg, 2, 10)
    part = make_batch(cfg, 2, 4, start=6)
    assert np.array_equal(full.h_raw[6:], part.h_raw)


@pytest.mark.parametrize("n", [1, 64, 500])
def test_batch_sizes(n):
    b = make_batch(SystemConfig(2, 2), 0, n)
    assert b.size == len(b) == n == len(list(b))


def test_make_batch_rejects_empty():
    with pytest.raises(ValueError):
        make_batch(SystemConfig(2, 2), 0, 0)


@pytest.mark.parametrize("mode,const", [("std", np.sqrt(0.1)), ("variance", 0.1)])
def test_normalization_is_exact_scaling(mode, const):
    cfg = SystemConfig.from_snr(3, 3, 10.0, normalization=mode)
    s = sample_channel(cfg, 1)
    assert np.array_equal(s.h_norm, s.h_raw / cfg.norm_constant)
    assert cfg.norm_constant == pytest.approx(const, rel=1e-15)


def test_batch_file_round_trip(tmp_path):
    b = make_batch(SystemConfig.from_snr(3, 4, 5.0), 9, 5, start=2)
    p = tmp_path / "b.tbb"
    save_batch(p, b)
    c = load_batch(p)
    assert c.cfg == b.cfg
    assert np.array_equal(c.h_raw, b.h_raw)
    assert np.array_equal(c.h_norm, b.h_norm)
    assert np.array_equal(c.indices, b.indices)


def test_truncated_batch_file(tmp_path):
    b = make_batch(SystemConfig(2, 2), 0, 3)
    p = tmp_path / "b.tbb"
    save_batch(p, b)
    blob = p.read_bytes()
    p.write_bytes(blob[:-5])
    with pytest.raises(ParseError) as exc:
        load_batch(p)
    assert exc.value.offset > 16
    assert "byte offset" in str(exc.value)
    p.write_bytes(blob[:12])
    with pytest.raises(ParseError):
        load_batch(p)


def test_empty_batch_files(tmp_path):
    p = tmp_path / "empty.tbb"
    p.write_bytes(b"")
    with pytest.raises(EmptyBatchError):
        load_batch(p)
    b = Batch(SystemConfig(2, 2), np.zeros((0, 2, 2)), [], [])
    save_batch(p, b)
    with pytest.raises(EmptyBatchError):
        load_batch(p)


def test_bad_magic(tmp_path):
    p = tmp_path / "x.tbb"
    p.write_bytes(b"NOTABATCH" * 4)
    with pytest.raises(ParseError) as exc:
        load_batch(p)
    assert exc.value.offset == 0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**63), index=st.integers(0, 2**40))
def test_sampling_is_pure(seed, index):
    cfg = SystemConfig(2, 3)
    assert np.array_equal(sample_channel(cfg, seed, index).h_raw,
                          sample_channel(cfg, seed, index).h_raw)

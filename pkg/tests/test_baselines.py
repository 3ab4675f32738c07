import warnings

import numpy as np
import pytest

from transbeam import kernels
from transbeam.baselines import mmse_beamformer, mrt_beamformer, power, wmmse, wmmse_batch
from transbeam.channel import SystemConfig, make_batch
from transbeam.objectives import sum_rate

from conftest import crandn


def angle(a, b):
    a, b = np.ravel(a), np.ravel(b)
    c = abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.arccos(min(1.0, c)))


def test_mmse_column_norms(rng):
    h = crandn(rng, 6, 5, 5)
    w = mmse_beamformer(h, 2.0, 0.3)
    assert np.abs(np.linalg.norm(w, axis=-2) - np.sqrt(2.0 / 5)).max() <= 1e-12
    assert np.abs(power(w) - 2.0).max() <= 1e-12


def test_mmse_single_user_high_noise_is_mrt(rng):
    h = crandn(rng, 1, 6)
    w = mmse_beamformer(h, 1.0, 1e9)
    assert angle(w[:, 0], h[0]) <= 1e-6


def test_mmse_beats_mrt_on_most_samples():
    batch = make_batch(SystemConfig.from_snr(8, 8, 10.0), 21, 1000)
    r_mmse = sum_rate(batch, mmse_beamformer(batch.h_norm, 1.0, batch.cfg.noise))
    r_mrt = sum_rate(batch, mrt_beamformer(batch.h_norm, 1.0))
    assert np.mean(r_mmse >= r_mrt) >= 0.90


def test_mrt_power_and_direction(rng):
    h = crandn(rng, 3, 4)
    w = mrt_beamformer(h, 1.5)
    assert abs(power(w) - 1.5) <= 1e-12
    for k in range(3):
        assert angle(w[:, k], h[k]) <= 1e-7


def test_mrt_orthogonal_rows_no_interference():
    q, _ = np.linalg.qr(crandn(np.random.default_rng(1), 4, 4))
    h = q.T[:3]
    w = mrt_beamformer(h, 1.0)
    g = np.conj(h) @ w
    assert np.abs(g - np.diag(np.diag(g))).max() <= 1e-12
    w_mmse = mmse_beamformer(h, 1.0, 1e8)
    for k in range(3):
        assert angle(w[:, k], w_mmse[:, k]) <= 1e-6


def test_mrt_zero_row_warns():
    h = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)
    with pytest.warns(UserWarning):
        w = mrt_beamformer(h, 1.0)
    assert np.all(w[:, 1] == 0)


@pytest.mark.parametrize("K", [4, 8])
def test_wmmse_monotone_and_dominant(K):
    for snr in (0.0, 10.0, 20.0):
        batch = make_batch(SystemConfig.from_snr(K, K, snr), 5, 10)
        w0 = mmse_beamformer(batch.h_norm, 1.0, batch.cfg.noise)
        _, reps = wmmse_batch(batch.h_norm, 1.0, batch.cfg.noise)
        for b, rep in enumerate(reps):
            assert np.all(np.diff(rep.objective_trace) >= -1e-9)
            assert rep.rate >= sum_rate(batch.h_norm[b], w0[b]) - 1e-9
            assert abs(power(rep.final) - 1.0) <= 1e-6


def test_wmmse_fixed_point_terminates_quickly(rng):
    h = crandn(rng, 4, 4)
    first = wmmse(h, 1.0, 1.0, max_iters=5000, tol=1e-13)
    again = wmmse(h, 1.0, init=first.final, tol=1e-5)
    assert again.iterations <= 2
    assert again.converged
    assert abs(again.objective_trace[-1] - again.objective_trace[-2]) < 1e-5


def test_wmmse_single_user_is_mrt(rng):
    h = crandn(rng, 1, 5)
    rep = wmmse(h, 1.0, 1.0, init=crandn(rng, 5, 1))
    mrt = mrt_beamformer(h, 1.0)
    phase = np.vdot(mrt[:, 0], rep.final[:, 0])
    assert np.abs(rep.final - mrt * phase / abs(phase)).max() <= 1e-6


def test_wmmse_argument_checks(rng):
    h = crandn(rng, 2, 2)
    with pytest.raises(ValueError):
        wmmse(h, 1.0, 1.0, max_iters=0)
    with pytest.raises(ValueError):
        wmmse(h, 1.0, 1.0, tol=0.0)
    with pytest.raises(ValueError):
        wmmse(h, 1.0)


@pytest.mark.parametrize("impl", ["numpy_impl", "numba_impl"])
def test_wmmse_paths_agree(monkeypatch, impl, rng):
    h = crandn(rng, 4, 4)
    w0 = mmse_beamformer(h, 1.0, 1.0)
    ref = kernels.numpy_impl.wmmse(h, w0, 1.0, 500, 1e-5, 60)
    monkeypatch.setattr(kernels, "active", getattr(kernels, impl))
    rep = wmmse(h, 1.0, init=w0)
    assert rep.iterations == ref[2]
    assert np.allclose(rep.final, ref[0], atol=1e-10)
    assert np.allclose(rep.objective_trace, ref[1], atol=1e-10)


def test_zero_channel_warns_not_crashes():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        w = mmse_beamformer(np.eye(3) * 1e-3, 1.0, 1.0)
    assert np.isfinite(w).all()

import os
import subprocess
import sys

import numpy as np
import pytest

from transbeam import kernels

from conftest import crandn

pytestmark = pytest.mark.skipif(kernels.numba_impl is None, reason="numba not installed")


def test_sum_rate_paths_agree(rng):
    h, w = crandn(rng, 7, 5, 5), crandn(rng, 7, 5, 5)
    a = kernels.numba_impl.sum_rate(h, w)
    b = kernels.numpy_impl.sum_rate(h, w)
    assert np.allclose(a, b, rtol=1e-13, atol=0)


def test_cholesky_paths_agree(rng):
    x = crandn(rng, 3, 6, 6)
    a = x @ np.conj(np.swapaxes(x, -1, -2)) + 6 * np.eye(6)
    rhs = crandn(rng, 3, 6, 2)
    xa, sa = kernels.numba_impl.cholesky_solve(a, rhs)
    xb, sb = kernels.numpy_impl.cholesky_solve(a, rhs)
    assert np.all(sa == 0) and np.all(sb == 0)
    assert np.allclose(xa, xb, rtol=1e-12, atol=1e-14)


def test_cholesky_reports_failing_pivot():
    a = np.eye(3, dtype=complex)[None].copy()
    a[0, 2, 2] = -1.0
    for impl in (kernels.numba_impl, kernels.numpy_impl):
        _, status = impl.cholesky_solve(a, np.ones((1, 3, 1), dtype=complex))
        assert status[0] != 0


@pytest.mark.parametrize("K", [1, 3, 6])
def test_wmmse_paths_agree(rng, K):
    h = crandn(rng, K, K)
    w0 = crandn(rng, K, K)
    w0 /= np.linalg.norm(w0)
    wa, ta, ia, ca, sa = kernels.numba_impl.wmmse(h, w0, 1.0, 200, 1e-6, 60)
    wb, tb, ib, cb, sb = kernels.numpy_impl.wmmse(h, w0, 1.0, 200, 1e-6, 60)
    assert (ia, ca, sa) == (ib, cb, sb)
    assert np.allclose(ta, tb, atol=1e-10)
    assert np.allclose(wa, wb, atol=1e-9)


@pytest.mark.parametrize("flag,expect", [("0", "numpy"), ("1", "numba")])
def test_environment_flag_selects_path(flag, expect):
    env = dict(os.environ, TRANSBEAM_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c",
                          "from transbeam import kernels; print(kernels.active.name)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expect

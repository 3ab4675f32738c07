"""Classical beamformers: MRT, regularised MMSE and iterative WMMSE."""
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .numerics import frob_norm, solve_hpd
from .objectives import sum_rate

WMMSE_MAX_ITERS = 500
WMMSE_TOL = 1e-5
WMMSE_BISECT = 60


def _columns(h):
    # h_k as column vectors: (..., N, K)
    return np.swapaxes(np.asarray(getattr(h, "h_norm", h), dtype=np.complex128), -1, -2)


def _unit_columns(x):
    n = np.sqrt((x.real**2 + x.imag**2).sum(axis=-2, keepdims=True))
    zero = n == 0
    if zero.any():
        warnings.warn("zero channel row; the matching beamformer column is zero")
    return np.where(zero, 0.0, x / np.where(zero, 1.0, n))


def mrt_beamformer(h, P):
    """w_k = sqrt(P/K) h_k / ||h_k||."""
    cols = _columns(h)
    K = cols.shape[-1]
    return np.sqrt(P / K) * _unit_columns(cols)


def mmse_beamformer(h, P, sigma2):
    """Regularised-inverse precoder with equal per-user power P/K.

    Column k is the normalised solve of
    (sigma2 I + (P/K) sum_i h_i h_i^H) x = h_k, scaled to sqrt(P/K).
    """
    cols = _columns(h)
    N, K = cols.shape[-2:]
    cov = (P / K) * (cols @ np.conj(np.swapaxes(cols, -1, -2)))
    cov = cov + sigma2 * np.eye(N)
    # enforce exact Hermitian symmetry against rounding in the product
    cov = 0.5 * (cov + np.conj(np.swapaxes(cov, -1, -2)))
    x = solve_hpd(cov, cols)
    return np.sqrt(P / K) * _unit_columns(x)


@dataclass
class WmmseReport:
    iterations: int
    objective_trace: np.ndarray
    converged: bool
    final: np.ndarray

    @property
    def rate(self):
        return float(self.objective_trace[-1])


def wmmse(h, P, sigma2=None, max_iters=WMMSE_MAX_ITERS, tol=WMMSE_TOL, init=None,
          n_bisect=WMMSE_BISECT):
    """Sum-rate WMMSE for a single channel (K x N).

    Starts from ``init`` or, if absent, the MMSE beamformer (needs ``sigma2``).
    ``objective_trace[0]`` is the starting rate; each later entry follows one
    receiver/weight/transmitter sweep, and the transmit power is held at P.
    """
    from .errors import NumericalError

    if max_iters < 1 or not tol > 0:
        raise ValueError("need max_iters >= 1 and tol > 0")
    hn = np.asarray(getattr(h, "h_norm", h), dtype=np.complex128)
    if hn.ndim != 2:
        raise ValueError("wmmse works on one channel; use wmmse_batch for stacks")
    if init is None:
        if sigma2 is None:
            raise ValueError("MMSE initialisation needs sigma2")
        init = mmse_beamformer(hn, P, sigma2)
    w, trace, iters, converged, status = kernels.wmmse(hn, init, P, max_iters, tol, n_bisect)
    if status != 0:
        raise NumericalError(
            "WMMSE power bisection could not bracket the multiplier",
            {"iteration": int(iters) + 1, "trace": np.asarray(trace), "w": w},
        )
    return WmmseReport(int(iters), np.asarray(trace), bool(converged), w)


def wmmse_batch(h, P, sigma2=None, **kw):
    """Run :func:`wmmse` per sample; returns (W stack, list of reports)."""
    hn = np.asarray(getattr(h, "h_norm", h), dtype=np.complex128)
    inits = kw.pop("init", None)
    if inits is None:
        inits = mmse_beamformer(hn, P, sigma2)
    reports = [wmmse(hn[b], P, sigma2, init=inits[b], **kw) for b in range(hn.shape[0])]
    return np.stack([r.final for r in reports]), reports


def power(w):
    return frob_norm(w) ** 2

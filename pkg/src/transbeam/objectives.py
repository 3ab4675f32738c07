"""Sum rate, the curriculum MSE objective, and their beamformer gradients.

Channels ``h`` are (..., K, N) with row k holding user k's normalized channel
``h_k``; beamformers ``w`` are (..., N, K). The effective gain matrix is
``G = conj(h) @ w`` so that ``G[k, i] = h_k^H w_i``.

Functions with a ``_t`` suffix work on autodiff tensors holding real and
imaginary parts separately; the channel enters them as a constant.
"""
import math

import numpy as np

from . import kernels
from .autodiff import Tensor, backward, ops, use_tape, Tape
from .errors import ContractError, DimensionError

_TWO_OVER_LN2 = 2.0 / math.log(2.0)


def _channel(h):
    return getattr(h, "h_norm", h)


def _check(h, w):
    if h.shape[-1] != w.shape[-2] or h.shape[-2] != w.shape[-1]:
        raise DimensionError(f"channel {h.shape} and beamformer {w.shape} disagree")


def sum_rate(h, w):
    """Achievable sum rate in bits/s/Hz; one value per leading batch index."""
    h = np.asarray(_channel(h), dtype=np.complex128)
    w = np.asarray(w, dtype=np.complex128)
    _check(h, w)
    lead = np.broadcast_shapes(h.shape[:-2], w.shape[:-2])
    hh = np.broadcast_to(h, lead + h.shape[-2:]).reshape((-1,) + h.shape[-2:])
    ww = np.broadcast_to(w, lead + w.shape[-2:]).reshape((-1,) + w.shape[-2:])
    r = kernels.sum_rate(hh, ww).reshape(lead)
    return float(r) if r.ndim == 0 else r


def mse_objective(h, w):
    """||G||_F^2 - 2 Re tr(G) with G = conj(h) @ w (must be square)."""
    h = np.asarray(_channel(h), dtype=np.complex128)
    w = np.asarray(w, dtype=np.complex128)
    if h.shape[-1] != w.shape[-2]:
        raise DimensionError(f"channel {h.shape} and beamformer {w.shape} disagree")
    g = np.conj(h) @ w
    if g.shape[-1] != g.shape[-2]:
        raise DimensionError(f"HW is {g.shape[-2:]}, not square")
    r = (g.real**2 + g.imag**2).sum(axis=(-2, -1)) - 2.0 * np.trace(g.real, axis1=-2, axis2=-1)
    return float(r) if np.ndim(r) == 0 else r


def check_alpha(alpha, gamma):
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha={alpha} outside [0, 1]")
    if not gamma > 0:
        raise ContractError(f"gamma={gamma} must be positive")


def curriculum_loss(h, w, alpha, gamma):
    """alpha*gamma*MSE - (1 - alpha)*R_sum, to be minimised."""
    check_alpha(alpha, gamma)
    return alpha * gamma * mse_objective(h, w) - (1.0 - alpha) * sum_rate(h, w)


# ---------------------------------------------------------------------------
# Tensor versions
# ---------------------------------------------------------------------------


def split(h):
    h = np.asarray(_channel(h), dtype=np.complex128)
    return np.ascontiguousarray(h.real), np.ascontiguousarray(h.imag)


def gains_t(hr, hi, wr, wi):
    """Real and imaginary parts of conj(H) @ W."""
    gr = ops.add(ops.matmul(hr, wr), ops.matmul(hi, wi))
    gi = ops.sub(ops.matmul(hr, wi), ops.matmul(hi, wr))
    return gr, gi


def _rate_terms(hr, hi, wr, wi):
    gr, gi = gains_t(hr, hi, wr, wi)
    p = ops.add(ops.square(gr), ops.square(gi))
    eye = np.eye(p.shape[-1])
    total = ops.add(ops.sum_(p, axis=-1, keepdims=True), 1.0)
    signal = ops.sum_(ops.mul(p, eye), axis=-1, keepdims=True)
    interf = ops.sub(total, signal)
    return gr, gi, eye, total, interf


def sum_rate_t(hr, hi, wr, wi):
    """Per-sample sum rate as a tensor of shape (...)."""
    _, _, _, total, interf = _rate_terms(hr, hi, wr, wi)
    per_user = ops.sub(ops.log2(total), ops.log2(interf))
    return ops.sum_(per_user, axis=(-2, -1))


def mse_t(hr, hi, wr, wi):
    gr, gi = gains_t(hr, hi, wr, wi)
    eye = np.eye(gr.shape[-1])
    fro = ops.sum_(ops.add(ops.square(gr), ops.square(gi)), axis=(-2, -1))
    tr = ops.sum_(ops.mul(gr, eye), axis=(-2, -1))
    return ops.sub(fro, ops.scale(tr, 2.0))


def rate_grad_t(hr, hi, wr, wi):
    """Closed-form ascent direction of the sum rate, built from taped primitives.

    Returns (d/dRe W, d/dIm W). Because every step is a recorded primitive the
    result can itself be differentiated, which the unrolled ascent needs.
    """
    gr, gi, eye, total, interf = _rate_terms(hr, hi, wr, wi)
    off = 1.0 - eye
    c = ops.sub(ops.reciprocal(total), ops.mul(ops.reciprocal(interf), off))
    yr, yi = ops.mul(gr, c), ops.mul(gi, c)
    hrt = np.swapaxes(hr, -1, -2)
    hit = np.swapaxes(hi, -1, -2)
    dr = ops.sub(ops.matmul(hrt, yr), ops.matmul(hit, yi))
    di = ops.add(ops.matmul(hrt, yi), ops.matmul(hit, yr))
    return ops.scale(dr, _TWO_OVER_LN2), ops.scale(di, _TWO_OVER_LN2)


def sum_rate_grad(h, w):
    """Gradient of the sum rate w.r.t. the real and imaginary parts of ``w``.

    Returned packed as ``dR/dRe(w) + 1j * dR/dIm(w)`` with the shape of ``w``;
    computed by reverse-mode differentiation of :func:`sum_rate_t`.
    """
    h = np.asarray(_channel(h), dtype=np.complex128)
    w = np.asarray(w, dtype=np.complex128)
    _check(h, w)
    hr, hi = split(h)
    wr = Tensor(w.real.copy(), requires_grad=True)
    wi = Tensor(w.imag.copy(), requires_grad=True)
    with use_tape(Tape()):
        total = ops.sum_(sum_rate_t(hr, hi, wr, wi))
        backward(total)
    return wr.grad + 1j * wi.grad


def sum_rate_grad_closed(h, w):
    """Same quantity as :func:`sum_rate_grad` from the closed-form expression."""
    h = np.asarray(_channel(h), dtype=np.complex128)
    w = np.asarray(w, dtype=np.complex128)
    _check(h, w)
    hr, hi = split(h)
    dr, di = rate_grad_t(hr, hi, Tensor(w.real), Tensor(w.imag))
    return dr.data + 1j * di.data

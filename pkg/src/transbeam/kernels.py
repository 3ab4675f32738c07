"""Hot per-sample loops, compiled with numba when available.

Set ``TRANSBEAM_NUMBA=0`` in the environment before import to force the
pure-numpy path. Both paths are always importable as ``numba_impl`` /
``numpy_impl`` so they can be benchmarked against each other.
"""
import math
import os
import types

import numpy as np

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("TRANSBEAM_NUMBA", "1").lower() not in (
    "0",
    "false",
    "off",
    "no",
)


# ---------------------------------------------------------------------------
# Loop kernels, compiled by numba.
# ---------------------------------------------------------------------------


def _rate_single(hconj, w):
    K = hconj.shape[0]
    g = hconj @ w
    total = 0.0
    for k in range(K):
        num = g[k, k].real ** 2 + g[k, k].imag ** 2
        den = 1.0
        for i in range(K):
            if i != k:
                den += g[k, i].real ** 2 + g[k, i].imag ** 2
        total += math.log2(1.0 + num / den)
    return total


def _sum_rate_loop(h, w):
    # h: (B, K, N) complex rows h_k^T; w: (B, N, K)
    B = h.shape[0]
    out = np.empty(B)
    for b in range(B):
        out[b] = _rate_single(np.conj(h[b]), w[b])
    return out


def _cholesky_solve_loop(a, rhs):
    """Batched Hermitian positive-definite solve. Returns (x, status).

    status[b] is 0 on success, otherwise 1 + the failing pivot index.
    """
    B, n, _ = a.shape
    m = rhs.shape[2]
    x = np.zeros(rhs.shape, dtype=np.complex128)
    status = np.zeros(B, dtype=np.int64)
    for b in range(B):
        low = np.zeros((n, n), dtype=np.complex128)
        ok = True
        for j in range(n):
            s = a[b, j, j].real
            for p in range(j):
                s -= low[j, p].real ** 2 + low[j, p].imag ** 2
            if not s > 0.0:
                status[b] = j + 1
                ok = False
                break
            d = math.sqrt(s)
            low[j, j] = d
            for i in range(j + 1, n):
                t = a[b, i, j]
                for p in range(j):
                    t -= low[i, p] * np.conj(low[j, p])
                low[i, j] = t / d
        if not ok:
            continue
        for c in range(m):
            y = np.zeros(n, dtype=np.complex128)
            for i in range(n):
                t = rhs[b, i, c]
                for p in range(i):
                    t -= low[i, p] * y[p]
                y[i] = t / low[i, i].real
            for i in range(n - 1, -1, -1):
                t = y[i]
                for p in range(i + 1, n):
                    t -= np.conj(low[p, i]) * x[b, p, c]
                x[b, i, c] = t / low[i, i].real
    return x, status


def _power_at(pw, lam, mu):
    s = 0.0
    for j in range(lam.shape[0]):
        s += pw[j] / (lam[j] + mu) ** 2
    return s


def _wmmse_single(h, w0, power, max_iters, tol, n_bisect):
    """Sum-rate WMMSE from initial beamformer ``w0`` (N x K).

    Returns (w, trace, iterations, converged, status). ``trace[0]`` is the
    initial rate; status 0 is success, 1 is a bisection bracket failure.
    """
    K, N = h.shape
    hconj = np.conj(h)
    ht = h.T.copy()
    w = w0.copy()
    trace = np.zeros(max_iters + 1)
    trace[0] = _rate_single(hconj, w)
    iters = 0
    converged = False
    for it in range(1, max_iters + 1):
        g = hconj @ w
        coef = np.zeros(K)
        vu = np.zeros(K, dtype=np.complex128)
        for k in range(K):
            tot = 1.0
            for i in range(K):
                tot += g[k, i].real ** 2 + g[k, i].imag ** 2
            gkk = g[k, k]
            sig = gkk.real ** 2 + gkk.imag ** 2
            u = gkk / tot
            v = tot / (tot - sig)
            coef[k] = v * (u.real ** 2 + u.imag ** 2)
            vu[k] = v * u
        a = np.zeros((N, N), dtype=np.complex128)
        for k in range(K):
            for r in range(N):
                for c in range(N):
                    a[r, c] += coef[k] * ht[r, k] * hconj[k, c]
        rhs = np.zeros((N, K), dtype=np.complex128)
        for r in range(N):
            for k in range(K):
                rhs[r, k] = ht[r, k] * vu[k]
        lam, vecs = np.linalg.eigh(a)
        proj = np.conj(vecs.T) @ rhs
        pw = np.zeros(N)
        for j in range(N):
            for k in range(K):
                pw[j] += proj[j, k].real ** 2 + proj[j, k].imag ** 2
        scale = 0.0
        for j in range(N):
            scale = max(scale, abs(lam[j]))
        mu = 0.0
        if lam.min() <= 1e-12 * max(scale, 1.0) or _power_at(pw, lam, 0.0) > power:
            lo = 0.0
            hi = max(scale, 1e-12)
            grow = 0
            while _power_at(pw, lam, hi) > power:
                lo = hi
                hi *= 2.0
                grow += 1
                if grow > 200:
                    return w, trace[: it], it - 1, False, 1
            for _ in range(n_bisect):
                mid = 0.5 * (lo + hi)
                if _power_at(pw, lam, mid) > power:
                    lo = mid
                else:
                    hi = mid
            mu = hi
        for j in range(N):
            d = lam[j] + mu
            for k in range(K):
                proj[j, k] = proj[j, k] / d
        w = vecs @ proj
        # full power is never worse for the sum rate
        nrm = 0.0
        for r in range(N):
            for k in range(K):
                nrm += w[r, k].real ** 2 + w[r, k].imag ** 2
        if nrm > 0.0:
            w = w * math.sqrt(power / nrm)
        rate = _rate_single(hconj, w)
        trace[it] = rate
        iters = it
        if abs(rate - trace[it - 1]) < tol:
            converged = True
            break
    return w, trace[: iters + 1], iters, converged, 0


# ---------------------------------------------------------------------------
# Vectorised numpy fallbacks.
# ---------------------------------------------------------------------------


def _sum_rate_vec(h, w):
    g = np.conj(h) @ w
    p = g.real**2 + g.imag**2
    sig = np.diagonal(p, axis1=-2, axis2=-1)
    tot = 1.0 + p.sum(axis=-1)
    return np.log2(tot / (tot - sig)).sum(axis=-1)


def _cholesky_solve_vec(a, rhs):
    from scipy.linalg import solve_triangular

    B = a.shape[0]
    x = np.zeros(rhs.shape, dtype=np.complex128)
    status = np.zeros(B, dtype=np.int64)
    for b in range(B):
        try:
            low = np.linalg.cholesky(a[b])
        except np.linalg.LinAlgError:
            status[b] = 1
            continue
        y = solve_triangular(low, rhs[b], lower=True)
        x[b] = solve_triangular(low, y, lower=True, trans="C")
    return x, status


def _wmmse_vec(h, w0, power, max_iters, tol, n_bisect):
    hconj = np.conj(h)
    w = w0.copy()
    trace = [float(_sum_rate_vec(h, w))]
    iters = 0
    converged = False
    for it in range(1, max_iters + 1):
        g = hconj @ w
        tot = 1.0 + (g.real**2 + g.imag**2).sum(axis=1)
        gkk = np.diagonal(g)
        u = gkk / tot
        v = tot / (tot - np.abs(gkk) ** 2)
        a = (h.T * (v * np.abs(u) ** 2)) @ hconj
        rhs = h.T * (v * u)
        lam, vecs = np.linalg.eigh(a)
        proj = vecs.conj().T @ rhs
        pw = (proj.real**2 + proj.imag**2).sum(axis=1)
        scale = np.abs(lam).max()

        def pwr(mu):
            return float((pw / (lam + mu) ** 2).sum())

        mu = 0.0
        if lam.min() <= 1e-12 * max(scale, 1.0) or pwr(0.0) > power:
            lo, hi = 0.0, max(scale, 1e-12)
            grow = 0
            while pwr(hi) > power:
                lo, hi = hi, 2.0 * hi
                grow += 1
                if grow > 200:
                    return w, np.array(trace), it - 1, False, 1
            for _ in range(n_bisect):
                mid = 0.5 * (lo + hi)
                if pwr(mid) > power:
                    lo = mid
                else:
                    hi = mid
            mu = hi
        w = vecs @ (proj / (lam + mu)[:, None])
        nrm = float((w.real**2 + w.imag**2).sum())
        if nrm > 0.0:
            w = w * math.sqrt(power / nrm)
        trace.append(float(_sum_rate_vec(h, w)))
        iters = it
        if abs(trace[-1] - trace[-2]) < tol:
            converged = True
            break
    return w, np.array(trace), iters, converged, 0


numpy_impl = types.SimpleNamespace(
    name="numpy",
    sum_rate=_sum_rate_vec,
    cholesky_solve=_cholesky_solve_vec,
    wmmse=_wmmse_vec,
)

if HAS_NUMBA:
    _jit = numba.njit(cache=True, nogil=True)
    _rate_single_nb = _jit(_rate_single)
    _power_at_nb = _jit(_power_at)

    # rebind helpers inside the compiled closures
    def _bind(fn, **helpers):
        glb = dict(fn.__globals__)
        glb.update(helpers)
        clone = types.FunctionType(fn.__code__, glb, fn.__name__, fn.__defaults__)
        return _jit(clone)

    numba_impl = types.SimpleNamespace(
        name="numba",
        sum_rate=_bind(_sum_rate_loop, _rate_single=_rate_single_nb),
        cholesky_solve=_jit(_cholesky_solve_loop),
        wmmse=_bind(
            _wmmse_single, _rate_single=_rate_single_nb, _power_at=_power_at_nb
        ),
    )
else:  # pragma: no cover
    numba_impl = None

active = numba_impl if USE_NUMBA else numpy_impl


def sum_rate(h, w):
    h = np.ascontiguousarray(h, dtype=np.complex128)
    w = np.ascontiguousarray(w, dtype=np.complex128)
    return active.sum_rate(h, w)


def cholesky_solve(a, rhs):
    a = np.ascontiguousarray(a, dtype=np.complex128)
    rhs = np.ascontiguousarray(rhs, dtype=np.complex128)
    return active.cholesky_solve(a, rhs)


def wmmse(h, w0, power, max_iters, tol, n_bisect):
    h = np.ascontiguousarray(h, dtype=np.complex128)
    w0 = np.ascontiguousarray(w0, dtype=np.complex128)
    return active.wmmse(h, w0, float(power), int(max_iters), float(tol), int(n_bisect))

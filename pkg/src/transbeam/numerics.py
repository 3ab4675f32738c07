"""Dense complex matrix algebra.

Complex matrices are plain ``complex128`` numpy arrays. Channels are stored
users-as-rows (K x N) and beamformers antennas-as-rows (N x K). Functions
accept stacked inputs with arbitrary leading batch axes where noted.
"""
import numpy as np

from . import kernels
from .errors import DimensionError, SingularityError


def as_complex(a):
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim < 2:
        raise DimensionError(f"expected a matrix, got shape {a.shape}")
    return a


def matmul(a, b):
    a, b = as_complex(a), as_complex(b)
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def hermitian(a):
    return np.conj(np.swapaxes(as_complex(a), -1, -2))


def frob_norm(a):
    """Frobenius norm over the last two axes."""
    a = as_complex(a)
    return np.sqrt((a.real**2 + a.imag**2).sum(axis=(-2, -1)))


def solve_hpd(a, b):
    """Solve ``a @ x = b`` for Hermitian positive-definite ``a`` via Cholesky.

    Works on single matrices or stacks (..., n, n) / (..., n, m). A vector
    right-hand side of shape (n,) is accepted for a single system.
    """
    a = as_complex(a)
    b = np.asarray(b, dtype=np.complex128)
    vector = b.ndim == 1
    if vector:
        b = b[:, None]
    n = a.shape[-1]
    if a.shape[-2] != n:
        raise DimensionError(f"solve_hpd needs a square matrix, got {a.shape}")
    if b.shape[-2] != n:
        raise DimensionError(f"right-hand side rows {b.shape[-2]} != {n}")
    lead = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    aa = np.broadcast_to(a, lead + a.shape[-2:]).reshape(-1, n, n)
    bb = np.broadcast_to(b, lead + b.shape[-2:]).reshape(-1, n, b.shape[-1])
    if not np.allclose(aa, np.conj(np.swapaxes(aa, -1, -2)), rtol=1e-12, atol=1e-14):
        raise SingularityError("matrix is not Hermitian")
    x, status = kernels.cholesky_solve(aa, bb)
    bad = np.flatnonzero(status)
    if bad.size:
        raise SingularityError(
            f"matrix is not positive definite (batch item {bad[0]}, "
            f"pivot {status[bad[0]] - 1})"
        )
    x = x.reshape(lead + b.shape[-2:])
    return x[..., 0] if vector else x

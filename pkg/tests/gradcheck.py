"""Central finite-difference oracle shared by the gradient tests."""
import numpy as np

from transbeam.autodiff import Tape, Tensor, backward, no_grad, ops, use_tape


def fd_grad(f, x, h=1e-5):
    """Central differences of scalar f(ndarray) at x."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def check_primitive(fn, inputs, rng, h=1e-5):
    """Relative error of reverse-mode vs central differences for each input.

    The scalar probed is sum(fn(*inputs) * R) for a fixed random R.
    """
    with no_grad():
        out = fn(*[Tensor(x) for x in inputs])
    weights = rng.standard_normal(out.shape)

    def scalar(arrs):
        with no_grad():
            return float((fn(*[Tensor(a) for a in arrs]).data * weights).sum())

    leaves = [Tensor(x.copy(), requires_grad=True) for x in inputs]
    with use_tape(Tape()):
        loss = ops.sum_(ops.mul(fn(*leaves), weights))
        backward(loss)
    errs = []
    for i, x in enumerate(inputs):
        def fi(xi, i=i):
            arrs = list(inputs)
            arrs[i] = xi
            return scalar(arrs)
        num = fd_grad(fi, x, h)
        errs.append(float(np.linalg.norm(leaves[i].grad - num) / max(np.linalg.norm(num), 1e-12)))
    return errs

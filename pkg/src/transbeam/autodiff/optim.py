"""Adam and global-norm gradient clipping."""
import math

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def adam_step(params, grads, state, lr, beta1=BETA1, beta2=BETA2, eps=EPS):
    """One bias-corrected Adam update, in place.

    ``params`` and ``grads`` map names to arrays; ``state`` maps names to
    ``{"m", "v", "t"}`` and is created lazily so parameters may join later.
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        st = state.get(name)
        if st is None:
            st = state[name] = {"m": np.zeros_like(p), "v": np.zeros_like(p), "t": 0}
        st["t"] += 1
        t = st["t"]
        st["m"] *= beta1
        st["m"] += (1.0 - beta1) * g
        st["v"] *= beta2
        st["v"] += (1.0 - beta2) * g * g
        mhat = st["m"] / (1.0 - beta1**t)
        vhat = st["v"] / (1.0 - beta2**t)
        p -= lr * mhat / (np.sqrt(vhat) + eps)
    return params, state


def clip_grad_norm(tensors, max_norm):
    """Scale grads so their joint L2 norm is at most ``max_norm``; return the old norm."""
    grads = [t.grad for t in tensors if t.grad is not None]
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm is not None and total > max_norm > 0:
        c = max_norm / total
        for g in grads:
            g *= c
    return total


class Adam:
    def __init__(self, lr=1e-3, beta1=BETA1, beta2=BETA2, eps=EPS):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = {}

    def step(self, named_tensors, lr=None):
        params = {n: t.data for n, t in named_tensors.items()}
        grads = {
            n: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for n, t in named_tensors.items()
        }
        adam_step(params, grads, self.state, self.lr if lr is None else lr,
                  self.beta1, self.beta2, self.eps)

"""One residual Transformer block mapping (H, W) to refined (H, W).

Tokens are stored as rows. For a K x N channel H (K = N = L) and an N x K
beamformer W:

* user-level sequence ``S`` rows: Re H, Im H, Re W^T, Im W^T   (4L x L)
* antenna-level sequence ``T`` rows: Re H^T, Im H^T, Re W, Im W (4L x L)

The first 2L rows of each sequence are channel tokens, the last 2L rows
beamformer tokens. Reconstruction reads the output rows in the ``S``
orientation, so H comes back K x N and W^T comes back K x N.
"""
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .autodiff import Tensor, no_grad, ops
from .errors import ConfigError, DegenerateOutputError, DimensionError


@dataclass
class ModelConfig:
    L: int
    M: int = 0
    E: int = 4
    D_e: int = 0
    dropout_p: float = 0.0
    T: int = 7
    Q: int = 5
    eta_w: float = 1e-2
    P: float = 1.0
    cross_residual: bool = True
    project_pga: bool = True
    zero_init_branches: bool = False

    def __post_init__(self):
        if not self.M:
            self.M = 4 * self.L
        if not self.D_e:
            self.D_e = max(1, self.M // self.E) if self.E >= 1 else 0
        if self.L < 2:
            raise ConfigError("must be at least 2", "L")
        if self.M < self.L:
            raise ConfigError("embedding width must be at least L", "M")
        if self.E < 1 or self.D_e < 1:
            raise ConfigError("head count and head width must be positive", "E/D_e")
        if self.T < 0 or self.Q < 0:
            raise ConfigError("must be non-negative", "T/Q")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("must lie in [0, 1)", "dropout_p")

    @property
    def D(self):
        return 2 * self.D_e * self.E

    def to_dict(self):
        return asdict(self)


@dataclass
class BlockParams:
    fc_s_w: Tensor
    fc_s_b: Tensor
    tn_s_g: Tensor
    tn_s_b: Tensor
    fc_t_w: Tensor
    fc_t_b: Tensor
    tn_t_g: Tensor
    tn_t_b: Tensor
    zq: Tensor
    zk: Tensor
    zv: Tensor
    xq: Tensor
    xk: Tensor
    xv: Tensor
    sa_w: Tensor
    sa_b: Tensor
    sa_tn_g: Tensor
    sa_tn_b: Tensor
    tn_h_g: Tensor
    tn_h_b: Tensor
    tn_w_g: Tensor
    tn_w_b: Tensor
    h_w: Tensor
    h_b: Tensor
    h_tn_g: Tensor
    h_tn_b: Tensor
    w_w: Tensor
    w_b: Tensor
    w_tn_g: Tensor
    w_tn_b: Tensor

    def named(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def set_trainable(self, flag):
        for t in self.named().values():
            t.requires_grad = flag
            t.grad = np.zeros_like(t.data) if flag else None

    def zero_grad(self):
        for t in self.named().values():
            t.zero_grad()

    @classmethod
    def from_arrays(cls, arrays, requires_grad=True):
        return cls(**{k: Tensor(np.array(v, dtype=np.float64), requires_grad, name=k)
                      for k, v in arrays.items()})


def param_shapes(cfg):
    L, M, E, De, D = cfg.L, cfg.M, cfg.E, cfg.D_e, cfg.D
    vec = lambda n: (n,)  # noqa: E731
    return {
        "fc_s_w": (L, M), "fc_s_b": vec(M), "tn_s_g": vec(M), "tn_s_b": vec(M),
        "fc_t_w": (L, M), "fc_t_b": vec(M), "tn_t_g": vec(M), "tn_t_b": vec(M),
        "zq": (E, M, De), "zk": (E, M, De), "zv": (E, M, De),
        "xq": (E, M, De), "xk": (E, M, De), "xv": (E, M, De),
        "sa_w": (D, L), "sa_b": vec(L), "sa_tn_g": vec(L), "sa_tn_b": vec(L),
        "tn_h_g": vec(L), "tn_h_b": vec(L), "tn_w_g": vec(L), "tn_w_b": vec(L),
        "h_w": (L, L), "h_b": vec(L), "h_tn_g": vec(L), "h_tn_b": vec(L),
        "w_w": (L, L), "w_b": vec(L), "w_tn_g": vec(L), "w_tn_b": vec(L),
    }


# gains of the last token norm inside each MLP branch
BRANCH_GAINS = ("sa_tn_g", "h_tn_g", "w_tn_g")


def init_block(cfg, rng):
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); TN gains 1; all biases 0.

    With ``cfg.zero_init_branches`` the MLP branch gains start at 0, so every
    branch emits GELU(0) = 0 and the block starts as its residual path.
    """
    arrays = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) >= 2:
            bound = 1.0 / math.sqrt(shape[-2])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        elif name.endswith("_g"):
            zero = cfg.zero_init_branches and name in BRANCH_GAINS
            arrays[name] = np.zeros(shape) if zero else np.ones(shape)
        else:
            arrays[name] = np.zeros(shape)
    return BlockParams.from_arrays(arrays)


def zero_block(cfg, requires_grad=False):
    return BlockParams.from_arrays(
        {k: np.zeros(s) for k, s in param_shapes(cfg).items()}, requires_grad
    )


# ---------------------------------------------------------------------------
# tokens
# ---------------------------------------------------------------------------


@dataclass
class TokenBundle:
    S: np.ndarray
    T: np.ndarray


def build_tokens(h_in, w_in):
    """Token sequences from a K x N channel and a beamformer in K x N layout."""
    h = np.asarray(h_in, dtype=np.complex128)
    w = np.asarray(w_in, dtype=np.complex128)
    if h.shape[-1] != h.shape[-2]:
        raise DimensionError(f"only K = N is supported, got {h.shape[-2:]}")
    if w.shape != h.shape:
        raise DimensionError(f"beamformer layout {w.shape} != channel {h.shape}")
    ht = np.swapaxes(h, -1, -2)
    wt = np.swapaxes(w, -1, -2)
    S = np.concatenate([h.real, h.imag, w.real, w.imag], axis=-2)
    T = np.concatenate([ht.real, ht.imag, wt.real, wt.imag], axis=-2)
    return TokenBundle(S, T)


def tokens_from_bundle(S):
    """Invert ``build_tokens`` from S alone; returns (H, W in K x N layout)."""
    L = S.shape[-1]
    return S[..., :L, :] + 1j * S[..., L:2 * L, :], S[..., 2 * L:3 * L, :] + 1j * S[..., 3 * L:, :]


def tokens_t(hr, hi, wr, wi):
    """Tensor form of ``build_tokens``; ``wr``/``wi`` are the N x K beamformer."""
    S = ops.concat([hr, hi, ops.transpose(wr), ops.transpose(wi)], axis=-2)
    T = ops.concat([ops.transpose(hr), ops.transpose(hi), wr, wi], axis=-2)
    return S, T


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def _fc(x, w, b):
    return ops.add(ops.matmul(x, w), b)


def mlp_t(x, w, b, g, beta, p=0.0, rng=None):
    """FC -> token norm -> GELU -> dropout."""
    return ops.dropout(ops.gelu(ops.token_norm(_fc(x, w, b), g, beta)), p, rng)


def embed_t(S, T, prm):
    s_bar = ops.token_norm(_fc(S, prm.fc_s_w, prm.fc_s_b), prm.tn_s_g, prm.tn_s_b)
    t_bar = ops.token_norm(_fc(T, prm.fc_t_w, prm.fc_t_b), prm.tn_t_g, prm.tn_t_b)
    return s_bar, t_bar


def _heads(x_bar, wq, wk, wv, De):
    E, M, _ = wq.shape
    n = x_bar.shape[-2]
    # one GEMM for all heads and all three projections: (M, 3*E*De)
    w_all = ops.reshape(ops.swapaxes(ops.concat([wq, wk, wv], axis=0), 0, 1), (M, 3 * E * De))
    proj = ops.reshape(ops.matmul(x_bar, w_all), x_bar.shape[:-2] + (n, 3 * E, De))
    proj = ops.swapaxes(proj, -3, -2)  # (..., 3E, 4L, De)
    q = ops.scale(ops.slice_(proj, -3, 0, E), 1.0 / math.sqrt(De))
    k = ops.slice_(proj, -3, E, 2 * E)
    v = ops.slice_(proj, -3, 2 * E, 3 * E)
    attn = ops.softmax(ops.matmul(q, ops.transpose(k)))
    y = ops.matmul(attn, v)  # (..., E, 4L, De)
    y = ops.swapaxes(y, -3, -2)  # (..., 4L, E, De)
    return ops.reshape(y, y.shape[:-2] + (E * De,)), attn


def attention_core(s_bar, t_bar, prm, cfg):
    """Concatenated head outputs Y (4L x D) and the two attention maps."""
    ys, a_s = _heads(s_bar, prm.zq, prm.zk, prm.zv, cfg.D_e)
    yt, a_t = _heads(t_bar, prm.xq, prm.xk, prm.xv, cfg.D_e)
    return ops.concat([ys, yt], axis=-1), a_s, a_t


def mhsa_t(s_bar, t_bar, prm, cfg, rng=None):
    y, _, _ = attention_core(s_bar, t_bar, prm, cfg)
    return mlp_t(y, prm.sa_w, prm.sa_b, prm.sa_tn_g, prm.sa_tn_b, cfg.dropout_p, rng)


def block_forward_t(hr, hi, wr, wi, prm, cfg, rng=None):
    """Tensor-level block. Inputs/outputs: H parts (..., L, L), W parts (..., L, L).

    Returns (H_out real, H_out imag, W_out real, W_out imag) with W_out scaled
    to Frobenius power ``cfg.P``.
    """
    L = cfg.L
    if hr.shape[-2:] != (L, L) or wr.shape[-2:] != (L, L):
        raise DimensionError(f"block expects {L} x {L} inputs, got {hr.shape} / {wr.shape}")
    S, T = tokens_t(hr, hi, wr, wi)
    s_bar, t_bar = embed_t(S, T, prm)
    yc = mhsa_t(s_bar, t_bar, prm, cfg, rng)

    def res(lo, hi_):
        parts = [ops.slice_(yc, -2, lo, hi_), ops.slice_(S, -2, lo, hi_)]
        if cfg.cross_residual:
            parts.append(ops.slice_(T, -2, lo, hi_))
        out = parts[0]
        for p in parts[1:]:
            out = ops.add(out, p)
        return out

    yh_sa = res(0, 2 * L)
    yw_sa = res(2 * L, 4 * L)
    yh_bar = ops.token_norm(yh_sa, prm.tn_h_g, prm.tn_h_b)
    yw_bar = ops.token_norm(yw_sa, prm.tn_w_g, prm.tn_w_b)
    yh_out = ops.add(mlp_t(yh_bar, prm.h_w, prm.h_b, prm.h_tn_g, prm.h_tn_b, cfg.dropout_p, rng), yh_sa)
    yw_out = ops.add(mlp_t(yw_bar, prm.w_w, prm.w_b, prm.w_tn_g, prm.w_tn_b, cfg.dropout_p, rng), yw_sa)

    h_out_r = ops.slice_(yh_out, -2, 0, L)
    h_out_i = ops.slice_(yh_out, -2, L, 2 * L)
    # W~ rows are in W^T (K x N) layout; transpose back to N x K
    w_tr = ops.transpose(ops.slice_(yw_out, -2, 0, L))
    w_ti = ops.transpose(ops.slice_(yw_out, -2, L, 2 * L))
    return (h_out_r, h_out_i) + normalize_power_t(w_tr, w_ti, cfg.P)


def normalize_power_t(wr, wi, P):
    """Scale each sample to ||W||_F^2 = P."""
    nrm = ops.l2_norm(ops.concat([wr, wi], axis=-1), axis=(-2, -1), keepdims=True)
    if np.any(nrm.data < 1e-12):
        raise DegenerateOutputError("block produced a beamformer with norm below 1e-12")
    f = ops.scale(ops.reciprocal(nrm), math.sqrt(P))
    return ops.mul(wr, f), ops.mul(wi, f)


def block_forward(h_in, w_in, prm, cfg, rng=None):
    """Complex front end: (H K x N, W N x K) -> (H_out, W_out); no gradients kept."""
    h = np.asarray(h_in, dtype=np.complex128)
    w = np.asarray(w_in, dtype=np.complex128)
    if h.shape[-1] != h.shape[-2]:
        raise DimensionError(f"only K = N is supported, got {h.shape[-2:]}")
    with no_grad():
        hr, hi, wr, wi = block_forward_t(
            Tensor(h.real), Tensor(h.imag), Tensor(w.real), Tensor(w.imag), prm, cfg, rng
        )
    return hr.data + 1j * hi.data, wr.data + 1j * wi.data

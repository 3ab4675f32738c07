"""T-block unrolled optimiser: block, then Q projected ascent steps, repeated."""
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, load_checkpoint, no_grad, ops, save_checkpoint
from .baselines import mmse_beamformer
from .errors import ContractError, DegenerateOutputError, VersionError
from .objectives import rate_grad_t, split, sum_rate, sum_rate_t
from .transformer import BlockParams, ModelConfig, block_forward_t, init_block, param_shapes

CHECKPOINT_KIND = "transbeam-l2o"


def block_seed(seed, t):
    return [int(seed) % 2**63, 7919, int(t)]


class L2OModel:
    """Model config plus one parameter set per block (index 0 is block 1)."""

    def __init__(self, cfg, blocks):
        self.cfg = cfg
        self.blocks = list(blocks)

    @classmethod
    def random(cls, cfg, seed):
        return cls(cfg, [init_block(cfg, np.random.default_rng(block_seed(seed, t)))
                         for t in range(cfg.T)])

    def named_parameters(self, blocks=None):
        out = {}
        for t, blk in enumerate(self.blocks):
            if blocks is not None and t not in blocks:
                continue
            for name, ten in blk.named().items():
                out[f"block{t + 1}.{name}"] = ten
        return out

    def snapshot(self):
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def save(self, path, extra=None):
        arrays = {k: v.data for k, v in self.named_parameters().items()}
        hp = dict(self.cfg.to_dict(), kind=CHECKPOINT_KIND)
        save_checkpoint(path, arrays, hp, extra)

    @classmethod
    def load(cls, path, expect=None):
        arrays, hp, _ = load_checkpoint(path)
        if hp.pop("kind", None) != CHECKPOINT_KIND:
            raise VersionError(f"{path} is not an L2O model checkpoint")
        cfg = ModelConfig(**hp)
        if expect is not None and (expect.L != cfg.L or expect.T != cfg.T):
            raise VersionError(
                f"checkpoint has L={cfg.L}, T={cfg.T}; expected L={expect.L}, T={expect.T}"
            )
        shapes = param_shapes(cfg)
        blocks = []
        for t in range(cfg.T):
            part = {n: arrays[f"block{t + 1}.{n}"] for n in shapes}
            for n, s in shapes.items():
                if tuple(part[n].shape) != s:
                    raise VersionError(f"block{t + 1}.{n} has shape {part[n].shape}, expected {s}")
            blocks.append(BlockParams.from_arrays(part))
        return cls(cfg, blocks)


# ---------------------------------------------------------------------------
# projected gradient ascent
# ---------------------------------------------------------------------------


def project_t(wr, wi, P):
    """Rescale samples with ||W||_F > sqrt(P) back onto the power sphere."""
    nrm = ops.l2_norm(ops.concat([wr, wi], axis=-1), axis=(-2, -1), keepdims=True)
    rp = math.sqrt(P)
    f = ops.scale(ops.reciprocal(ops.maximum(nrm, rp)), rp)
    return ops.mul(wr, f), ops.mul(wi, f)


def pga_t(hr, hi, wr, wi, Q, eta, P, project=True):
    """Q steps of W <- W + eta * grad R(H, W) on the true channel; differentiable."""
    for _ in range(Q):
        dr, di = rate_grad_t(hr, hi, wr, wi)
        wr = ops.add(wr, ops.scale(dr, eta))
        wi = ops.add(wi, ops.scale(di, eta))
        if project:
            wr, wi = project_t(wr, wi, P)
    return wr, wi


def pga_refine(h, w0, Q, eta_w, P, project=True):
    """Numpy front end of :func:`pga_t`."""
    if Q < 0:
        raise ContractError("Q must be non-negative")
    w0 = np.asarray(w0, dtype=np.complex128)
    if Q == 0:
        return w0.copy()
    hr, hi = split(h)
    with no_grad():
        wr, wi = pga_t(hr, hi, Tensor(w0.real), Tensor(w0.imag), Q, eta_w, P, project)
    return wr.data + 1j * wi.data


# ---------------------------------------------------------------------------
# rollout
# ---------------------------------------------------------------------------


def initial_beamformer(batch, P):
    return mmse_beamformer(batch.h_norm, P, batch.cfg.noise)


def step_t(hr0, hi0, feat, w, blk, cfg, rng=None):
    """One block plus ascent. ``feat``/``w`` are (real, imag) tensor pairs."""
    fr, fi, w0r, w0i = block_forward_t(feat[0], feat[1], w[0], w[1], blk, cfg, rng)
    wr, wi = pga_t(hr0, hi0, w0r, w0i, cfg.Q, cfg.eta_w, cfg.P, cfg.project_pga)
    return (fr, fi), (wr, wi)


def unroll_t(hr0, hi0, w_init, model, t_s, t_e, rng=None):
    """Run blocks 1..t_e; blocks before t_s run without a tape.

    Returns the list of (real, imag) beamformer tensors W^(t_s)..W^(t_e).
    """
    feat = (Tensor(hr0), Tensor(hi0))
    w = (Tensor(w_init.real.copy()), Tensor(w_init.imag.copy()))
    outs = []
    for t in range(1, t_e + 1):
        blk = model.blocks[t - 1]
        try:
            if t < t_s:
                with no_grad():
                    feat, w = step_t(hr0, hi0, feat, w, blk, model.cfg, rng)
                feat = (feat[0].detach(), feat[1].detach())
                w = (w[0].detach(), w[1].detach())
            else:
                feat, w = step_t(hr0, hi0, feat, w, blk, model.cfg, rng)
                outs.append(w)
        except DegenerateOutputError as exc:
            raise DegenerateOutputError(f"block {t}: {exc}") from exc
    return outs


@dataclass
class Trajectory:
    """Per-step (H^(t), W^(t), rate) for t = 0..upto, stacked over the batch."""

    h: list = field(default_factory=list)
    w: list = field(default_factory=list)
    rates: list = field(default_factory=list)

    def __len__(self):
        return len(self.w)

    @property
    def mean_rates(self):
        return np.array([r.mean() for r in self.rates])


def rollout(batch, model, upto=None, rng=None):
    """Forward-only trajectory through blocks 1..upto (default: all)."""
    cfg = model.cfg
    upto = cfg.T if upto is None else upto
    if not 0 <= upto <= len(model.blocks):
        raise ContractError(f"upto={upto} outside [0, {len(model.blocks)}]")
    h0 = batch.h_norm
    hr0, hi0 = split(h0)
    w = initial_beamformer(batch, cfg.P)
    traj = Trajectory([h0.copy()], [w.copy()], [np.atleast_1d(sum_rate(h0, w))])
    feat = (Tensor(hr0), Tensor(hi0))
    wt = (Tensor(w.real.copy()), Tensor(w.imag.copy()))
    with no_grad():
        for t in range(1, upto + 1):
            try:
                feat, wt = step_t(hr0, hi0, feat, wt, model.blocks[t - 1], cfg, rng)
            except DegenerateOutputError as exc:
                raise DegenerateOutputError(f"block {t}: {exc}") from exc
            hc = feat[0].data + 1j * feat[1].data
            wc = wt[0].data + 1j * wt[1].data
            traj.h.append(hc)
            traj.w.append(wc)
            traj.rates.append(np.atleast_1d(sum_rate(h0, wc)))
    return traj


def cumulative_objective(batch, model, window, rng=None, w_init=None):
    """Batch mean of sum_{t=t_s}^{t_e} R(H, W^(t)) as a scalar tensor."""
    t_s, t_e = window
    if batch.size < 1:
        raise ContractError("empty batch")
    if not 1 <= t_s <= t_e <= len(model.blocks):
        raise ContractError(f"window {window} invalid for {len(model.blocks)} blocks")
    hr0, hi0 = split(batch.h_norm)
    if w_init is None:
        w_init = initial_beamformer(batch, model.cfg.P)
    outs = unroll_t(hr0, hi0, w_init, model, t_s, t_e, rng)
    total = None
    for wr, wi in outs:
        r = ops.mean(sum_rate_t(hr0, hi0, wr, wi))
        total = r if total is None else ops.add(total, r)
    return total

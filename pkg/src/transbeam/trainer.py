"""Curriculum phase, sliding-window phase, cosine learning rate, periodic testing."""
import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import Adam, Tape, backward, clip_grad_norm, ops, use_tape
from .channel import make_batch
from .errors import ConfigError, NumericalAbort
from .l2o import cumulative_objective, initial_beamformer, rollout, unroll_t
from .objectives import check_alpha, mse_t, split, sum_rate_t

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["epoch", "phase", "t_s", "t_e", "alpha", "lr", "train_objective",
                  "test_mean_rate", "test_std_rate", "wallclock_s"]

# stream offsets for the three channel streams derived from one seed
TRAIN_STREAM, TEST_STREAM, FINAL_STREAM = 0, 1, 2


@dataclass
class CurriculumSchedule:
    T_alpha: int = 500
    step: float = 0.01
    period: int = 5
    gamma: float = 20.0

    def alpha(self, epoch):
        if epoch > self.T_alpha:
            return 0.0
        return max(0.0, 1.0 - self.step * (epoch // self.period))


def default_window(T, width=3):
    """t_e = 1..T with t_s trailing by at most ``width - 1`` blocks."""
    t_e = list(range(1, T + 1))
    return [max(1, e - width + 1) for e in t_e], t_e


@dataclass
class WindowSchedule:
    t_s: list
    t_e: list
    state: int = 0
    epochs_per_state: list = None

    def __post_init__(self):
        if len(self.t_s) != len(self.t_e) or not self.t_s:
            raise ConfigError("t_s and t_e must be non-empty and of equal length", "window")
        for s, e in zip(self.t_s, self.t_e):
            if not 1 <= s <= e:
                raise ConfigError(f"bad window [{s}, {e}]", "window")
        if any(b < a for a, b in zip(self.t_e, self.t_e[1:])):
            raise ConfigError("t_e must be non-decreasing", "window")
        if self.epochs_per_state is not None and len(self.epochs_per_state) != len(self.t_s):
            raise ConfigError("needs one entry per window state", "epochs_per_state")

    @classmethod
    def for_depth(cls, T, width=3):
        return cls(*default_window(T, width))

    @property
    def window(self):
        return self.t_s[self.state], self.t_e[self.state]

    @property
    def terminal(self):
        return self.state >= len(self.t_s) - 1

    def __len__(self):
        return len(self.t_s)

    def state_for(self, k, total):
        """Window state for the k-th (0-based) post-curriculum epoch of ``total``."""
        n = len(self.t_s)
        if self.epochs_per_state is not None:
            acc = 0
            for i, e in enumerate(self.epochs_per_state):
                acc += e
                if k < acc:
                    return i
            return n - 1
        return min(n - 1, k * n // max(total, 1))


def advance_window(schedule):
    """Next window state; a terminal schedule is returned unchanged."""
    if schedule.terminal:
        return schedule
    return replace(schedule, state=schedule.state + 1)


@dataclass
class TrainConfig:
    total_epochs: int = 3000
    lr_start: float = 2e-4
    lr_end: float = 5e-5
    batch_train: int = 64
    batch_test: int = 500
    T_test: int = 50
    seed: int = 0
    clip_norm: float = 1.0
    no_cl: bool = False
    no_pga: bool = False
    end_to_end: bool = False
    deterministic: bool = True
    curriculum: CurriculumSchedule = field(default_factory=CurriculumSchedule)
    window_t_s: list = None
    window_t_e: list = None
    epochs_per_state: list = None

    def __post_init__(self):
        if isinstance(self.curriculum, dict):
            self.curriculum = CurriculumSchedule(**self.curriculum)
        for name in ("total_epochs", "batch_train", "batch_test", "T_test"):
            if int(getattr(self, name)) < 1:
                raise ConfigError("must be at least 1", name)
        if not self.lr_start >= self.lr_end > 0:
            raise ConfigError("need lr_start >= lr_end > 0", "lr_start/lr_end")

    def lr(self, epoch):
        c = 0.5 * (self.lr_start - self.lr_end) * (1.0 + math.cos(math.pi * epoch / self.total_epochs))
        return min(self.lr_start, max(self.lr_end, self.lr_end + c))

    def alpha(self, epoch):
        if self.no_cl:
            return 0.0
        return self.curriculum.alpha(epoch)

    def window_schedule(self, T):
        if self.end_to_end:
            return WindowSchedule([1], [T])
        if self.window_t_s is not None:
            return WindowSchedule(list(self.window_t_s), list(self.window_t_e),
                                  epochs_per_state=self.epochs_per_state)
        ws = WindowSchedule.for_depth(T)
        ws.epochs_per_state = self.epochs_per_state
        return ws

    def to_dict(self):
        return asdict(self)


@dataclass
class EvalResult:
    mean: float
    std: float
    step_means: np.ndarray
    seconds_per_sample: float
    rates: np.ndarray


def evaluate(model, batch, upto=None):
    """Forward-only rollout; statistics of the last step's sum rate."""
    t0 = time.perf_counter()
    traj = rollout(batch, model, upto)
    dt = time.perf_counter() - t0
    final = traj.rates[-1]
    return EvalResult(float(final.mean()), float(final.std()), traj.mean_rates,
                      dt / batch.size, final)


@dataclass
class TrainResult:
    model: object
    metrics: list
    final_eval: EvalResult = None
    checkpoints: list = field(default_factory=list)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics(path, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(METRIC_COLUMNS)
        for r in rows:
            wr.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])


def curriculum_objective(batch, model, alpha, gamma, rng=None, w_init=None):
    """Batch mean of alpha*gamma*MSE(H, W^(1)) - (1-alpha)*R(H, W^(1))."""
    check_alpha(alpha, gamma)
    hr0, hi0 = split(batch.h_norm)
    if w_init is None:
        w_init = initial_beamformer(batch, model.cfg.P)
    (wr, wi), = unroll_t(hr0, hi0, w_init, model, 1, 1, rng)
    terms = []
    if alpha > 0:
        terms.append(ops.scale(ops.mean(mse_t(hr0, hi0, wr, wi)), alpha * gamma))
    if alpha < 1:
        terms.append(ops.scale(ops.mean(sum_rate_t(hr0, hi0, wr, wi)), -(1.0 - alpha)))
    return terms[0] if len(terms) == 1 else ops.add(terms[0], terms[1])


def train(tcfg, model, sys_cfg, out_dir=None, progress=None):
    """Run the full schedule, updating ``model`` in place."""
    cfg = model.cfg
    if tcfg.no_pga and cfg.Q != 0:
        raise ConfigError("no_pga runs need a model with Q = 0", "no_pga")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    windows = tcfg.window_schedule(cfg.T)
    T_alpha = tcfg.curriculum.T_alpha
    post_total = tcfg.total_epochs - T_alpha
    rng = np.random.default_rng([tcfg.seed, 31337]) if cfg.dropout_p > 0 else None
    opt = Adam()
    rows = []
    result = TrainResult(model, rows)
    t_start = time.perf_counter()
    last_state = None
    frozen_snap = {}
    tape = Tape()

    def checkpoint(tag):
        if out is None:
            return None
        p = out / f"checkpoint_{tag}.tbck"
        model.save(p, {"epoch": epoch, "tag": tag})
        result.checkpoints.append(str(p))
        return str(p)

    for epoch in range(1, tcfg.total_epochs + 1):
        lr = tcfg.lr(epoch)
        batch = make_batch(sys_cfg, tcfg.seed * 4 + TRAIN_STREAM, tcfg.batch_train,
                           start=(epoch - 1) * tcfg.batch_train)
        w_init = initial_beamformer(batch, cfg.P)
        with use_tape(tape):
            if epoch <= T_alpha:
                phase, alpha = "curriculum", tcfg.alpha(epoch)
                t_s = t_e = 1
                loss = curriculum_objective(batch, model, alpha, tcfg.curriculum.gamma, rng, w_init)
                train_obj = float(loss.data)
            else:
                phase, alpha = "window", 0.0
                state = windows.state_for(epoch - T_alpha - 1, post_total)
                if state != last_state:
                    _check_frozen(model, frozen_snap, epoch)
                    if last_state is not None:
                        checkpoint(f"state{last_state}")
                    while windows.state < state:
                        windows = advance_window(windows)
                    last_state = state
                    t_s, t_e = windows.window
                    frozen_snap = {k: v.data.copy() for k, v in
                                   model.named_parameters(range(t_s - 1)).items()}
                    log.info("epoch %d: window [%d, %d]", epoch, t_s, t_e)
                t_s, t_e = windows.window
                obj = cumulative_objective(batch, model, (t_s, t_e), rng, w_init)
                loss = ops.scale(obj, -1.0)
                train_obj = float(obj.data)
            if not math.isfinite(float(loss.data)):
                tape.clear()
                raise NumericalAbort(
                    f"non-finite loss at epoch {epoch}",
                    {"epoch": epoch, "phase": phase, "t_s": t_s, "t_e": t_e, "lr": lr},
                    result.checkpoints[-1] if result.checkpoints else None,
                )
            active = model.named_parameters(range(t_s - 1, t_e))
            for ten in model.named_parameters().values():
                ten.zero_grad()
            backward(loss)
        clip_grad_norm(active.values(), tcfg.clip_norm)
        opt.step(active, lr)

        test_mean = test_std = None
        if epoch % tcfg.T_test == 0:
            tb = make_batch(sys_cfg, tcfg.seed * 4 + TEST_STREAM, tcfg.batch_test,
                            start=(epoch // tcfg.T_test - 1) * tcfg.batch_test)
            ev = evaluate(model, tb, upto=t_e)
            test_mean, test_std = ev.mean, ev.std
        rows.append({
            "epoch": epoch, "phase": phase, "t_s": t_s, "t_e": t_e, "alpha": float(alpha),
            "lr": lr, "train_objective": train_obj, "test_mean_rate": test_mean,
            "test_std_rate": test_std, "wallclock_s": time.perf_counter() - t_start,
        })
        if progress is not None:
            progress(rows[-1])
    _check_frozen(model, frozen_snap, tcfg.total_epochs)
    if last_state is not None:
        checkpoint(f"state{last_state}")
    epoch = tcfg.total_epochs
    checkpoint("final")
    if out is not None:
        write_metrics(out / "metrics.csv", rows)
    return result


def _check_frozen(model, snap, epoch):
    params = model.named_parameters()
    for name, arr in snap.items():
        if not np.array_equal(params[name].data, arr):
            raise AssertionError(f"frozen parameter {name} changed before epoch {epoch}")


def final_test(model, sys_cfg, seed, n=500):
    """Evaluate on a fresh batch drawn from the final-test stream of ``seed``."""
    batch = make_batch(sys_cfg, seed * 4 + FINAL_STREAM, n)
    return batch, evaluate(model, batch)

"""Command-line entry point: ``transbeam train|sweep|ablate|time``.

Exit codes: 0 success, 2 configuration error, 3 numerical abort, 4 I/O error.
"""
import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import platform
import statistics
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import kernels
from .baselines import mmse_beamformer, mrt_beamformer, wmmse_batch
from .channel import SystemConfig, make_batch
from .errors import ConfigError, NumericalAbort, NumericalError, ParseError, VersionError
from .l2o import L2OModel, rollout
from .objectives import sum_rate
from .trainer import CurriculumSchedule, TrainConfig, final_test, train
from .transformer import ModelConfig

log = logging.getLogger("transbeam")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
SCHEMES = ("mmse", "mrt", "wmmse", "l2o")
ABLATIONS = ("proposed", "no_cl", "no_pga", "end_to_end")
DEFAULT_SNRS = (0.0, 5.0, 10.0, 15.0, 20.0)
EVAL_CHUNK = 64


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class RunConfig:
    system: SystemConfig
    model: ModelConfig
    train: TrainConfig

    def to_dict(self):
        return {"system": dataclasses.asdict(self.system), "model": self.model.to_dict(),
                "train": self.train.to_dict()}


def _take(section, cls, name, skip=()):
    if not isinstance(section, dict):
        raise ConfigError("must be a JSON object", name)
    known = {f.name for f in dataclasses.fields(cls) if f.init} - set(skip)
    for key in section:
        if key not in known:
            raise ConfigError("unknown key", f"{name}.{key}")
    return dict(section)


def _build(cls, kwargs, name):
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(exc.reason, f"{name}.{exc.field}") from exc
    except TypeError as exc:
        raise ConfigError(str(exc), name) from exc


def parse_config(raw):
    """Build a :class:`RunConfig` from the JSON document ``raw`` (a dict).

    Required: ``model.L`` and one of ``system.snr_db`` / ``system.sigma2``.
    ``system.K`` and ``system.N`` default to ``model.L``.
    """
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object", "<root>")
    for key in raw:
        if key not in ("system", "model", "train"):
            raise ConfigError("unknown section", key)
    m = _take(raw.get("model", {}), ModelConfig, "model")
    if "L" not in m:
        raise ConfigError("required field is missing", "model.L")
    model = _build(ModelConfig, m, "model")

    s = dict(raw.get("system", {}))
    snr = s.pop("snr_db", None)
    s = _take(s, SystemConfig, "system")
    s.setdefault("K", model.L)
    s.setdefault("N", model.L)
    if snr is not None:
        if "sigma2" in s:
            raise ConfigError("give snr_db or sigma2, not both", "system.sigma2")
        try:
            snr = float(snr)
        except (TypeError, ValueError) as exc:
            raise ConfigError("must be a number", "system.snr_db") from exc
        s["sigma2"] = s.get("sigma_H2", 1.0) * s.get("P", 1.0) / 10.0 ** (snr / 10.0)
    elif "sigma2" not in s:
        raise ConfigError("required field is missing (or give sigma2)", "system.snr_db")
    system = _build(SystemConfig, s, "system")
    if (system.K, system.N) != (model.L, model.L):
        raise ConfigError("K and N must both equal model.L", "system.K/N")
    if system.P != model.P:
        raise ConfigError("system.P and model.P disagree", "model.P")

    t = _take(raw.get("train", {}), TrainConfig, "train")
    if "curriculum" in t:
        c = _take(t["curriculum"], CurriculumSchedule, "train.curriculum")
        t["curriculum"] = _build(CurriculumSchedule, c, "train.curriculum")
    tcfg = _build(TrainConfig, t, "train")
    if tcfg.no_pga and model.Q != 0:
        model = dataclasses.replace(model, Q=0)
    return RunConfig(system, model, tcfg)


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", str(path)) from exc
    return parse_config(raw)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def build_id():
    """Content hash of the package sources, standing in for a commit id."""
    h = hashlib.sha1()
    for p in sorted(Path(__file__).parent.rglob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


def manifest(command, extra):
    out = {
        "command": command,
        "build": build_id(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "kernels": "numba" if kernels.active is kernels.numba_impl else "numpy",
    }
    out.update(extra)
    return out


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for r in rows:
            wr.writerow([repr(v) if isinstance(v, float) else v for v in r])


def parse_snrs(text):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse {text!r}", "--snr") from exc
    if not vals:
        raise ConfigError("empty SNR list", "--snr")
    return vals


def l2o_rates(model, batch):
    """Final-step rates of ``model`` on ``batch``, evaluated in chunks."""
    out = []
    for lo in range(0, batch.size, EVAL_CHUNK):
        sub = dataclasses.replace(batch, h_raw=batch.h_raw[lo:lo + EVAL_CHUNK],
                                  seeds=batch.seeds[lo:lo + EVAL_CHUNK],
                                  indices=batch.indices[lo:lo + EVAL_CHUNK])
        out.append(rollout(sub, model).rates[-1])
    return np.concatenate(out)


def scheme_rates(scheme, batch, model=None):
    """Per-sample rates of one scheme on ``batch`` plus elapsed seconds."""
    P, noise = batch.cfg.P, batch.cfg.noise
    t0 = time.perf_counter()
    if scheme == "mmse":
        r = sum_rate(batch, mmse_beamformer(batch.h_norm, P, noise))
    elif scheme == "mrt":
        r = sum_rate(batch, mrt_beamformer(batch.h_norm, P))
    elif scheme == "wmmse":
        w, _ = wmmse_batch(batch.h_norm, P, noise)
        r = sum_rate(batch, w)
    elif scheme == "l2o":
        r = l2o_rates(model, batch)
    else:
        raise ConfigError(f"unknown scheme {scheme!r}", "scheme")
    return np.atleast_1d(r), time.perf_counter() - t0


def time_schemes(schemes, batch, model=None, reps=10):
    """Median per-sample wall-clock seconds over ``reps`` runs after one warm-up."""
    if reps < 1:
        raise ConfigError("need at least one repetition", "reps")
    if reps == 1:
        warnings.warn("a single repetition gives an unstable median", RuntimeWarning)
    out = {}
    for s in schemes:
        scheme_rates(s, batch, model)
        times = [scheme_rates(s, batch, model)[1] / batch.size for _ in range(reps)]
        out[s] = statistics.median(times)
    return out


def _system_like(model_cfg, snr, base=None):
    kw = {} if base is None else {"sigma_H2": base.sigma_H2, "normalization": base.normalization}
    return SystemConfig.from_snr(model_cfg.L, model_cfg.L, snr, P=model_cfg.P, **kw)


def write_trajectory(path, model, batch):
    traj = rollout(batch, model)
    rows = [(t, float(r.mean()), float(r.std())) for t, r in enumerate(traj.rates)]
    write_rows(path, ["step", "mean_rate", "std_rate"], rows)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _apply_overrides(rc, args):
    tkw = {}
    if args.seed is not None:
        tkw["seed"] = args.seed
    if args.deterministic:
        tkw["deterministic"] = True
    if tkw:
        rc.train = dataclasses.replace(rc.train, **tkw)
    return rc


def run_training(rc, out, label="train"):
    out.mkdir(parents=True, exist_ok=True)
    model = L2OModel.random(rc.model, rc.train.seed)
    write_json(out / "manifest.json", manifest(label, {"config": rc.to_dict()}))

    def progress(row):
        if row["test_mean_rate"] is not None:
            log.info("epoch %d [%d,%d] test rate %.4f", row["epoch"], row["t_s"],
                     row["t_e"], row["test_mean_rate"])

    train(rc.train, model, rc.system, out_dir=out, progress=progress)
    batch, ev = final_test(model, rc.system, rc.train.seed, rc.train.batch_test)
    mmse, _ = scheme_rates("mmse", batch)
    summary = {"final_mean_rate": ev.mean, "final_std_rate": ev.std,
               "step_mean_rates": ev.step_means, "mmse_mean_rate": float(mmse.mean())}
    write_json(out / "final_test.json", summary)
    write_trajectory(out / "trajectory.csv", model, batch)
    return model, summary


def cmd_train(args):
    if not args.config:
        raise ConfigError("train needs --config", "--config")
    rc = _apply_overrides(load_config(args.config), args)
    out = Path(args.out or "run")
    _, summary = run_training(rc, out)
    print(json.dumps({"out": str(out), "final_mean_rate": summary["final_mean_rate"]}))


def cmd_ablate(args):
    if not args.config:
        raise ConfigError("ablate needs --config", "--config")
    rc = _apply_overrides(load_config(args.config), args)
    out = Path(args.out or "ablate")
    rows = []
    for name in ABLATIONS:
        tcfg, mcfg = rc.train, rc.model
        if name != "proposed":
            tcfg = dataclasses.replace(tcfg, **{name: True})
        if name == "no_pga":
            mcfg = dataclasses.replace(mcfg, Q=0)
        _, s = run_training(RunConfig(rc.system, mcfg, tcfg), out / name, f"ablate:{name}")
        rows.append((name, s["final_mean_rate"], s["final_std_rate"], s["mmse_mean_rate"]))
    write_rows(out / "ablation.csv", ["variant", "final_mean_rate", "final_std_rate",
                                      "mmse_mean_rate"], rows)
    print(json.dumps({"out": str(out)}))


def _load_model(args):
    if not args.checkpoint:
        raise ConfigError("this command needs --checkpoint", "--checkpoint")
    expect = None
    if args.config:
        expect = load_config(args.config).model
    return L2OModel.load(args.checkpoint, expect=expect)


def cmd_sweep(args):
    model = _load_model(args)
    snrs = parse_snrs(args.snr) if args.snr else list(DEFAULT_SNRS)
    seed = 0 if args.seed is None else args.seed
    n = args.batch or 500
    out = Path(args.out or "sweep")
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for snr in snrs:
        batch = make_batch(_system_like(model.cfg, snr), seed, n)
        for s in SCHEMES:
            r, dt = scheme_rates(s, batch, model)
            rows.append((s, snr, float(r.mean()), float(r.std()), dt / n))
    write_rows(out / "sweep.csv", ["scheme", "snr_db", "mean_rate", "std_rate",
                                   "seconds_per_sample"], rows)
    write_json(out / "manifest.json", manifest("sweep", {
        "checkpoint": str(args.checkpoint), "snr_db": snrs, "batch": n, "seed": seed,
        "model": model.cfg.to_dict()}))
    print(json.dumps({"out": str(out), "rows": len(rows)}))


def cmd_time(args):
    model = _load_model(args)
    snr = parse_snrs(args.snr)[0] if args.snr else 15.0
    seed = 0 if args.seed is None else args.seed
    n = args.batch or 100
    out = Path(args.out or "timing")
    out.mkdir(parents=True, exist_ok=True)
    batch = make_batch(_system_like(model.cfg, snr), seed, n)
    med = time_schemes(SCHEMES, batch, model, args.reps)
    write_rows(out / "timing.csv", ["scheme", "median_seconds_per_sample", "repetitions"],
               [(s, med[s], args.reps) for s in SCHEMES])
    write_json(out / "manifest.json", manifest("time", {
        "checkpoint": str(args.checkpoint), "snr_db": snr, "batch": n, "seed": seed,
        "repetitions": args.reps, "model": model.cfg.to_dict()}))
    print(json.dumps({s: med[s] for s in SCHEMES}))


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "ablate": cmd_ablate, "time": cmd_time}


def build_parser():
    p = argparse.ArgumentParser(prog="transbeam", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--snr", help="comma-separated SNR values in dB")
    p.add_argument("--batch", type=int)
    p.add_argument("--deterministic", action="store_true",
                   help="fixed-order reductions (the only mode this build implements)")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--reps", type=int, default=10, help="timing repetitions")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    if args.batch is not None and args.batch < 1:
        print("error: --batch must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command](args)
    except (ConfigError, VersionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalAbort, NumericalError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        diag = getattr(exc, "diagnostics", None) or getattr(exc, "state", None)
        if isinstance(diag, dict):
            print(json.dumps({k: v for k, v in diag.items() if np.isscalar(v)}), file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ParseError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""``forcegrip`` command line.

Settings resolve flag > config file > built-in default.  The config file is
INI-style (``[section]`` headers, ``key = value`` lines); its path comes
from ``--config`` or the ``FORCEGRIP_CONFIG`` environment variable.

Exit codes: 0 ok, 1 domain error, 2 usage error.  Failures print a single
``error: <kind>: <message>`` line on stderr.
"""
from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import control, dsp, mlp, online, pipeline
from . import dataset as ds
from .errors import ConfigurationError, ForceGripError

CONFIG_ENV = "FORCEGRIP_CONFIG"


@dataclass
class RunConfig:
    data_dir: Path = Path("data")
    model_path: Path = Path("out/model.txt")
    out_dir: Path = Path("out")
    objects_path: Path | None = None
    seed: int = 0
    jobs: int = 1
    synth: ds.SynthConfig = field(default_factory=ds.SynthConfig)
    train: mlp.TrainConfig = field(default_factory=mlp.TrainConfig)
    gains: control.AdmittanceGains = field(default_factory=control.AdmittanceGains)


_SYNTH_KEYS = {"n_channels": int, "sample_rate_hz": float, "f_max_n": float, "emd_ms": float,
               "label_noise_n": float, "noise_low_hz": float, "noise_high_hz": float}
_TRAIN_KEYS = {"batch_size": int, "learning_rate": float, "weight_decay": float, "hidden_nodes": int,
               "max_epochs": int, "patience": int, "seed": int, "eval_every": int}


def _train_value(key: str, value: str):
    if key == "patience" and value.strip().lower() == "none":
        return None
    return _TRAIN_KEYS[key](value)


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from defaults, an optional file and flag overrides."""
    cfg = RunConfig()
    synth_kw, train_kw, gains_kw = {}, {}, {}
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise ConfigurationError(f"cannot read config file {path}")
        try:
            if parser.has_section("paths"):
                sec = parser["paths"]
                cfg.data_dir = Path(sec.get("data_dir", cfg.data_dir))
                cfg.model_path = Path(sec.get("model", cfg.model_path))
                cfg.out_dir = Path(sec.get("out_dir", cfg.out_dir))
                if "objects" in sec:
                    cfg.objects_path = Path(sec["objects"])
            if parser.has_section("run"):
                cfg.seed = parser["run"].getint("seed", cfg.seed)
                cfg.jobs = parser["run"].getint("jobs", cfg.jobs)
            if parser.has_section("synth"):
                for key, value in parser["synth"].items():
                    if key not in _SYNTH_KEYS:
                        raise ConfigurationError(f"{path}: unknown [synth] key {key!r}")
                    synth_kw[key] = _SYNTH_KEYS[key](value)
            if parser.has_section("train"):
                for key, value in parser["train"].items():
                    if key not in _TRAIN_KEYS:
                        raise ConfigurationError(f"{path}: unknown [train] key {key!r}")
                    train_kw[key] = _train_value(key, value)
            if parser.has_section("control"):
                for key, value in parser["control"].items():
                    if key not in ("k_p", "k_d"):
                        raise ConfigurationError(f"{path}: unknown [control] key {key!r}")
                    gains_kw[key] = float(value)
        except ValueError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("data_dir", "model_path", "out_dir", "objects_path"):
            setattr(cfg, key, Path(value))
        elif key in ("seed", "jobs"):
            setattr(cfg, key, int(value))
        elif key in _TRAIN_KEYS:
            train_kw[key] = value
        elif key in ("k_p", "k_d"):
            gains_kw[key] = value

    low = synth_kw.pop("noise_low_hz", None)
    high = synth_kw.pop("noise_high_hz", None)
    if low is not None or high is not None:
        default = ds.SynthConfig().noise_band_hz
        synth_kw["noise_band_hz"] = (low or default[0], high or default[1])
    cfg.synth = ds.SynthConfig(seed=cfg.seed, **synth_kw)
    cfg.train = mlp.TrainConfig(**{"seed": cfg.seed, **train_kw})
    cfg.gains = control.AdmittanceGains(**gains_kw)
    return cfg


# -- file naming ---------------------------------------------------------------------

def ramp_path(data_dir: Path, i: int) -> Path:
    return data_dir / f"ramp_{i:02d}.csv"


def mvc_path(data_dir: Path, i: int) -> Path:
    return data_dir / f"mvc_{i}.csv"


def _load_corpus(data_dir: Path):
    ramps = sorted(data_dir.glob("ramp_*.csv"))
    mvcs = sorted(data_dir.glob("mvc_*.csv"))
    if not ramps:
        raise ConfigurationError(f"no ramp trials (ramp_*.csv) in {data_dir}; run 'forcegrip synth' first")
    if len(mvcs) < 3:
        raise ConfigurationError(f"need 3 MVC trials (mvc_*.csv) in {data_dir}, found {len(mvcs)}")
    return [ds.load_trial(p) for p in ramps], [ds.load_trial(p) for p in mvcs]


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigurationError(f"{what} not found: {path}")
    return path


# -- commands --------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, out=sys.stdout) -> list[Path]:
    cfg.data_dir.mkdir(parents=True, exist_ok=True)
    ramps, mvcs = pipeline.synth_corpus(cfg.synth)
    written = []
    for i, trial in enumerate(ramps, start=1):
        ds.save_trial(ramp_path(cfg.data_dir, i), trial)
        written.append(ramp_path(cfg.data_dir, i))
    for i, trial in enumerate(mvcs, start=1):
        ds.save_trial(mvc_path(cfg.data_dir, i), trial)
        written.append(mvc_path(cfg.data_dir, i))
    print(f"wrote {len(written)} trial files to {cfg.data_dir}", file=out)
    return written


def cmd_train(cfg: RunConfig, grid: bool = False, cv_folds: int = 10, cv_epochs: int | None = None,
              out=sys.stdout) -> pipeline.FitResult:
    ramps, mvcs = _load_corpus(cfg.data_dir)
    result = pipeline.fit(ramps, mvcs, cfg.train, grid=mlp.SEARCH_GRID if grid else None,
                          cv_folds=cv_folds, cv_epochs=cv_epochs, jobs=cfg.jobs)
    cfg.model_path.parent.mkdir(parents=True, exist_ok=True)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    result.estimator.save(cfg.model_path)
    ds.save_mvc(cfg.out_dir / "mvc_profile.csv", result.estimator.mvc)
    result.curves.to_csv(cfg.out_dir / "training_curves.csv")
    if result.grid is not None:
        lines = ["batch_size,learning_rate,weight_decay,hidden_nodes,cv_rmse"]
        for c, score in result.grid.scores:
            lines.append(f"{c.batch_size},{c.learning_rate},{c.weight_decay},{c.hidden_nodes},{float(score)!r}")
        (cfg.out_dir / "grid_search.csv").write_text("\n".join(lines) + "\n")
        print(f"grid search: {len(result.grid.scores)} configurations, selected "
              f"batch={result.config.batch_size} lr={result.config.learning_rate} "
              f"decay={result.config.weight_decay} hidden={result.config.hidden_nodes}", file=out)
    if result.estimator.mvc.repeat_required:
        print("warning: MVC peak forces differ by more than 5%; record another MVC trial", file=out)
    for name in ("train", "validation", "test"):
        m = result.metrics[name]
        print(f"{name:<10s} R2={m['r2']:.4f} RMSE={m['rmse']:.4f} N", file=out)
    print(f"model written to {cfg.model_path}", file=out)
    return result


def _trial_arg(cfg: RunConfig, trial: str | None) -> Path:
    return _require(Path(trial) if trial else ramp_path(cfg.data_dir, pipeline.N_RAMP_TRIALS), "trial file")


def cmd_eval(cfg: RunConfig, trial: str | None = None, smoothing: int = online.SMOOTHING_WIDTH,
             out=sys.stdout) -> pipeline.Evaluation:
    estimator = online.ForceEstimator.load(_require(cfg.model_path, "model file"))
    path = _trial_arg(cfg, trial)
    rec = ds.load_trial(path)
    if rec.n_channels != estimator.n_channels:
        raise ConfigurationError(
            f"model expects {estimator.n_channels} channels, {path} has {rec.n_channels}")
    ev = pipeline.evaluate(estimator, rec, smoothing)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    dest = cfg.out_dir / f"eval_{path.stem}.csv"
    ev.to_csv(dest, rec.sample_rate_hz)
    print(f"raw R2={ev.raw_r2:.4f} RMSE={ev.raw_rmse:.4f} N | smoothed R2={ev.smoothed_r2:.4f} "
          f"RMSE={ev.smoothed_rmse:.4f} N | windows={len(ev.raw)} -> {dest}", file=out)
    return ev


def cmd_stream(cfg: RunConfig, trial: str | None = None, out=sys.stdout) -> list[online.ForceReference]:
    estimator = online.ForceEstimator.load(_require(cfg.model_path, "model file"))
    path = _trial_arg(cfg, trial)
    rec = ds.load_trial(path)
    refs = online.OnlinePredictor(estimator).replay(rec)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    dest = cfg.out_dir / f"stream_{path.stem}.csv"
    online.write_references(dest, refs)
    rate = (len(refs) - 1) / (refs[-1].timestamp - refs[0].timestamp) if len(refs) > 1 else float("nan")
    print(f"{len(refs)} references at {rate:.2f} Hz -> {dest}", file=out)
    return refs


def _objects(cfg: RunConfig) -> dict[str, control.ObjectSpec]:
    if cfg.objects_path is not None:
        return control.load_objects(_require(cfg.objects_path, "object spec file"))
    return dict(control.OBJECTS)


def cmd_grasp(cfg: RunConfig, object_name: str, plateau: float | None = None, refs: str | None = None,
              replay: str | None = None, out=sys.stdout) -> control.GraspOutcome:
    objects = _objects(cfg)
    if object_name not in objects:
        raise ConfigurationError(f"unknown object {object_name!r}; known: {', '.join(objects)}")
    obj = objects[object_name]
    sim = control.SimConfig()
    recorded = None
    if refs:
        recorded = online.read_references(_require(Path(refs), "reference file"))
    elif replay:
        estimator = online.ForceEstimator.load(_require(cfg.model_path, "model file"))
        recorded = online.OnlinePredictor(estimator).replay(ds.load_trial(_require(Path(replay), "trial file")))
    if recorded is not None:
        if not recorded:
            raise ConfigurationError("reference source produced no values")
        source = control.zero_order_hold(recorded)
        # the grasp phase ends with the demonstration; only then may the object be lifted
        end = recorded[-1].timestamp
        sim = replace(sim, lift_after_s=end, horizon_s=max(sim.horizon_s, end + 5.0))
    elif plateau is not None:
        source = control.plateau(plateau)
    elif object_name in control.BENCHMARK_GRASPS:
        source = control.plateau(control.BENCHMARK_GRASPS[object_name][0])
    else:
        raise ConfigurationError(f"no reference given for {object_name!r}; use --plateau, --refs or --replay")
    trace, outcome = control.run_grasp(obj, source, cfg.gains, sim)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    trace.to_csv(cfg.out_dir / f"grasp_{object_name}.csv")
    print(outcome.report_row(), file=out)
    return outcome


def cmd_psd(cfg: RunConfig, trial: str | None = None, out=sys.stdout) -> dsp.Spectrum:
    path = _trial_arg(cfg, trial)
    rec = ds.load_trial(path)
    force = ds.normal_force_magnitude(rec.force_thumb, rec.force_index)
    spec = dsp.psd(force, rec.sample_rate_hz)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    dest = cfg.out_dir / f"psd_{path.stem}.csv"
    lines = ["frequency_hz,power"] + [f"{float(f)!r},{float(p)!r}" for f, p in zip(spec.frequencies_hz, spec.power)]
    dest.write_text("\n".join(lines) + "\n")
    print(f"{100 * spec.fraction_below(ds.FORCE_LOWPASS_HZ):.2f}% of power below 15 Hz; "
          f"peak (non-DC) at {spec.peak_hz():.2f} Hz -> {dest}", file=out)
    return spec


def cmd_report(cfg: RunConfig, out=sys.stdout) -> list[control.GraspOutcome]:
    """Grasp every catalogued object that has a benchmark reference force."""
    objects = _objects(cfg)
    tasks = [(objects[k], control.BENCHMARK_GRASPS[k][0]) for k in objects if k in control.BENCHMARK_GRASPS]
    outcomes = control.sweep(tasks, cfg.gains, None, jobs=cfg.jobs)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["object,predicted_n,real_n,percent_of_max,outcome"]
    print(f"{'Object':<22s} {'Predicted (N)':>13s} {'Real (N)':>9s} {'Max (%)':>8s}  Outcome", file=out)
    for o in outcomes:
        print(f"{o.object_name:<22s} {o.f_ref_at_lift:>13.3f} {o.f_real_at_lift:>9.3f} "
              f"{o.percent_of_max:>8.2f}  {o.outcome.value}", file=out)
        lines.append(f"{o.object_name},{float(o.f_ref_at_lift)!r},{float(o.f_real_at_lift)!r},"
                     f"{float(o.percent_of_max)!r},{o.outcome.value}")
    (cfg.out_dir / "grasp_report.csv").write_text("\n".join(lines) + "\n")
    n_ok = sum(o.outcome is control.Outcome.SUCCESS for o in outcomes)
    print(f"{n_ok}/{len(outcomes)} Success", file=out)
    return outcomes


# -- argument parsing ------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"error: usage: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"config file (default: ${CONFIG_ENV})")
    common.add_argument("--data-dir")
    common.add_argument("--model", dest="model_path")
    common.add_argument("--out-dir")
    common.add_argument("--objects", dest="objects_path")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)

    parser = _Parser(prog="forcegrip", description="sEMG gripping-force prediction and force-guided grasp simulation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("synth", parents=[common], help="write 10 ramp + 3 MVC synthetic trials")

    p = sub.add_parser("train", parents=[common], help="calibrate, train and score the regressor")
    p.add_argument("--grid", action="store_true", help="k-fold grid search over the full 108-point hyperparameter grid")
    p.add_argument("--cv-folds", type=int, default=10)
    p.add_argument("--cv-epochs", type=int, help="epoch budget per CV fit (default: max_epochs)")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--hidden-nodes", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)

    p = sub.add_parser("eval", parents=[common], help="batch predictions on a trial")
    p.add_argument("--trial")
    p.add_argument("--smoothing", type=int, default=online.SMOOTHING_WIDTH)

    p = sub.add_parser("stream", parents=[common], help="replay a trial through the online predictor")
    p.add_argument("--trial")

    p = sub.add_parser("grasp", parents=[common], help="simulate one grasp")
    p.add_argument("object")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--plateau", type=float, help="constant reference force (N)")
    src.add_argument("--refs", help="reference CSV (timestamp_s,force_n)")
    src.add_argument("--replay", help="trial CSV streamed through the trained model")
    p.add_argument("--k-p", type=float)
    p.add_argument("--k-d", type=float)

    p = sub.add_parser("psd", parents=[common], help="power spectrum of a trial's gripping force")
    p.add_argument("--trial")

    p = sub.add_parser("report", parents=[common], help="grasp report over all catalogued objects")
    p.add_argument("--k-p", type=float)
    p.add_argument("--k-d", type=float)
    return parser


def main(argv=None, out=sys.stdout, err=sys.stderr) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = load_run_config(args.config, overrides)
        if args.command == "synth":
            cmd_synth(cfg, out)
        elif args.command == "train":
            cmd_train(cfg, args.grid, args.cv_folds, args.cv_epochs, out)
        elif args.command == "eval":
            cmd_eval(cfg, args.trial, args.smoothing, out)
        elif args.command == "stream":
            cmd_stream(cfg, args.trial, out)
        elif args.command == "grasp":
            cmd_grasp(cfg, args.object, args.plateau, args.refs, args.replay, out)
        elif args.command == "psd":
            cmd_psd(cfg, args.trial, out)
        elif args.command == "report":
            cmd_report(cfg, out)
    except ForceGripError as exc:
        print(f"error: {type(exc).__name__}: {' '.join(str(exc).split())}", file=err)
        return 1
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {' '.join(str(exc).split())}", file=err)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

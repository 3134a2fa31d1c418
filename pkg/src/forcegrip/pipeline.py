"""End-to-end wiring shared by the CLI and the acceptance suite."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import dataset as ds
from . import dsp
from . import mlp
from .errors import ArgumentError
from .online import SMOOTHING_WIDTH, ForceEstimator

N_RAMP_TRIALS = 10
N_MVC_TRIALS = 3
HP_ORDER = 4
HP_CUTOFF_HZ = 5.0
WINDOW_MS = 200.0
STRIDE_MS = 10.0


def trial_seeds(seed: int, n_ramp: int = N_RAMP_TRIALS, n_mvc: int = N_MVC_TRIALS):
    base = 1000 * seed
    return [base + i for i in range(n_ramp)], [base + 500 + i for i in range(n_mvc)]


def synth_corpus(config: ds.SynthConfig, n_ramp: int = N_RAMP_TRIALS, n_mvc: int = N_MVC_TRIALS):
    """Ramp trials #1..#n and MVC trials, all derived from ``config.seed``."""
    ramp_seeds, mvc_seeds = trial_seeds(config.seed, n_ramp, n_mvc)
    ramps = [ds.synth_trial(config, "ramp", s) for s in ramp_seeds]
    mvcs = [ds.synth_trial(config, "mvc", s) for s in mvc_seeds]
    return ramps, mvcs


def highpass(sample_rate_hz: float) -> dsp.FilterCoeffs:
    return dsp.design_butterworth(HP_ORDER, HP_CUTOFF_HZ, sample_rate_hz, "highpass")


@dataclass
class FitResult:
    estimator: ForceEstimator
    curves: mlp.TrainingCurves
    config: mlp.TrainConfig
    metrics: dict = field(default_factory=dict)
    grid: mlp.GridResult | None = None


def fit(ramps, mvc_trials, config: mlp.TrainConfig | None = None, grid: dict | None = None,
        cv_folds: int = 10, cv_epochs: int | None = None, jobs: int = 1) -> FitResult:
    """Calibrate, segment, split 7/2/1, optionally grid-search, train and score."""
    config = config or mlp.TrainConfig()
    ramps = list(ramps)
    if not ramps:
        raise ArgumentError("no ramp trials to train on")
    fs = ramps[0].sample_rate_hz
    hp = highpass(fs)
    mvc = ds.compute_mvc(mvc_trials, hp)
    parts = ds.split(ramps)
    xy = {name: ds.stack_features(getattr(parts, name), mvc, hp, WINDOW_MS, STRIDE_MS)
          for name in ("train", "validation", "test")}

    grid_result = None
    if grid is not None:
        base = config if cv_epochs is None else replace(config, max_epochs=cv_epochs)
        x_cv = np.vstack([xy["train"][0], xy["validation"][0]])
        y_cv = np.concatenate([xy["train"][1], xy["validation"][1]])
        grid_result = mlp.grid_search_cv(x_cv, y_cv, grid, k=cv_folds, base=base, jobs=jobs)
        config = replace(grid_result.best, max_epochs=config.max_epochs, patience=config.patience)

    model = mlp.init_for(config, n_inputs=mvc.n_channels)
    model, curves = mlp.train(model, xy["train"], xy["validation"], config)
    metrics = {}
    for name, (x, y) in xy.items():
        pred = model.predict(x)
        metrics[name] = {"rmse": mlp.rmse(pred, y), "r2": mlp.r2(pred, y)}
    estimator = ForceEstimator(model=model, mvc=mvc, sample_rate_hz=fs, window_ms=WINDOW_MS,
                               hp_order=HP_ORDER, hp_cutoff_hz=HP_CUTOFF_HZ)
    return FitResult(estimator=estimator, curves=curves, config=config, metrics=metrics, grid=grid_result)


@dataclass
class Evaluation:
    end_indices: np.ndarray
    labels: np.ndarray
    raw: np.ndarray
    smoothed: np.ndarray

    @property
    def raw_r2(self) -> float:
        return mlp.r2(self.raw, self.labels)

    @property
    def smoothed_r2(self) -> float:
        return mlp.r2(self.smoothed, self.labels)

    @property
    def raw_rmse(self) -> float:
        return mlp.rmse(self.raw, self.labels)

    @property
    def smoothed_rmse(self) -> float:
        return mlp.rmse(self.smoothed, self.labels)

    def to_csv(self, path, sample_rate_hz: float) -> None:
        lines = ["time_s,label_n,raw_n,smoothed_n"]
        for e, y, r, s in zip(self.end_indices, self.labels, self.raw, self.smoothed):
            lines.append(f"{float(e / sample_rate_hz)!r},{float(y)!r},{float(r)!r},{float(s)!r}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def evaluate(estimator: ForceEstimator, trial: ds.TrialRecording, smoothing_width: int = SMOOTHING_WIDTH,
             stride_ms: float = STRIDE_MS) -> Evaluation:
    """Batch predictions on every training-style window of ``trial``, raw and moving-averaged."""
    feats, labels, ends = ds.featurize(trial, estimator.mvc, estimator.highpass, estimator.window_ms, stride_ms)
    raw = estimator.model.predict(feats)
    return Evaluation(end_indices=ends, labels=labels, raw=raw, smoothed=dsp.moving_average(raw, smoothing_width))

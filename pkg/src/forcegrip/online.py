"""Streaming gripping-force reference from multichannel sEMG.

:class:`OnlinePredictor` follows the FIFO scheme used at run time: samples
fill an EMG window; once it is full every new sample yields one raw force
prediction, predictions accumulate in a force buffer of ``B`` entries, and
each time that buffer fills its mean is emitted and the buffer emptied.  At
200 Hz with ``B = 10`` that is a 20 Hz reference.  Emitted means are then
smoothed by a trailing moving average and clamped to ``[0, f_cap_n]``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import dsp
from .errors import ConfigurationError, ParseError
from .mlp import MlpModel, load_model, save_model

OUTER_LOOP_HZ = 20.0
GRIPPER_MAX_FORCE_N = 20.0
SMOOTHING_WIDTH = 5


@dataclass
class ForceEstimator:
    """A trained regressor bundled with the preprocessing it was trained on."""

    model: MlpModel
    mvc: ds.MvcProfile
    sample_rate_hz: float = 200.0
    window_ms: float = 200.0
    hp_order: int = 4
    hp_cutoff_hz: float = 5.0

    def __post_init__(self):
        if self.model.n_inputs != self.mvc.n_channels:
            raise ConfigurationError(
                f"model expects {self.model.n_inputs} features but MVC profile has {self.mvc.n_channels} channels")

    @property
    def n_channels(self) -> int:
        return self.mvc.n_channels

    @property
    def window_len(self) -> int:
        return ds.ms_to_samples(self.window_ms, self.sample_rate_hz)

    @property
    def highpass(self) -> dsp.FilterCoeffs:
        return dsp.design_butterworth(self.hp_order, self.hp_cutoff_hz, self.sample_rate_hz, "highpass")

    def predict_windows(self, trial: ds.TrialRecording, stride: int = 1):
        """Batch path: raw prediction for every window ending at ``W-1, W-1+stride, ...``.

        Each window goes through the network on its own so the arithmetic is
        identical to the streaming path.
        """
        self._check_channels(trial.n_channels)
        w = self.window_len
        filtered = dsp.filter_apply(self.highpass, dsp.FilterState.zeros(self.highpass, self.n_channels), trial.emg)
        ends = ds.window_end_indices(len(trial), w, stride)
        preds = np.array([self.model.predict_one(dsp.window_features(filtered[e - w + 1:e + 1], self.mvc.x_mvc))
                          for e in ends])
        return ends, preds

    def _check_channels(self, n: int) -> None:
        if n != self.n_channels:
            raise ConfigurationError(f"stream has {n} channels, model was trained on {self.n_channels}")

    def save(self, path) -> None:
        save_model(path, self.model, self.mvc, meta={
            "sample_rate_hz": self.sample_rate_hz, "window_ms": self.window_ms,
            "hp_order": self.hp_order, "hp_cutoff_hz": self.hp_cutoff_hz})

    @classmethod
    def load(cls, path) -> "ForceEstimator":
        model, mvc, meta = load_model(path)
        if mvc is None:
            raise ConfigurationError(f"{Path(path)}: model file carries no MVC profile")
        return cls(model=model, mvc=ds.MvcProfile(mvc),
                   sample_rate_hz=float(meta.get("sample_rate_hz", 200.0)),
                   window_ms=float(meta.get("window_ms", 200.0)),
                   hp_order=int(meta.get("hp_order", 4)),
                   hp_cutoff_hz=float(meta.get("hp_cutoff_hz", 5.0)))


@dataclass(frozen=True)
class ForceReference:
    value: float
    timestamp: float
    sample_index: int
    raw_mean: float


def force_buffer_size(sample_rate_hz: float, output_rate_hz: float = OUTER_LOOP_HZ) -> int:
    return max(1, int(round(sample_rate_hz / output_rate_hz)))


class OnlinePredictor:
    """Single-stream predictor; not safe to share between producers."""

    def __init__(self, estimator: ForceEstimator, buffer_size: int | None = None,
                 smoothing_width: int = SMOOTHING_WIDTH, f_cap_n: float = GRIPPER_MAX_FORCE_N):
        self.estimator = estimator
        self.buffer_size = buffer_size or force_buffer_size(estimator.sample_rate_hz)
        self.smoothing_width = smoothing_width
        self.f_cap_n = f_cap_n
        self._hp = estimator.highpass
        self.reset()

    def reset(self) -> None:
        w = self.estimator.window_len
        self.emg_fifo = deque(maxlen=w)
        self._filtered_fifo = deque(maxlen=w)
        self.force_buffer: list[float] = []
        self._emitted = deque(maxlen=self.smoothing_width)
        self._state = dsp.FilterState.zeros(self._hp, self.estimator.n_channels)
        self._n_seen = 0

    def push(self, sample) -> ForceReference | None:
        sample = np.asarray(sample, dtype=float).reshape(-1)
        self.estimator._check_channels(sample.size)
        index = self._n_seen
        self._n_seen += 1
        # appending to a full deque drops the oldest sample: the buffer tail
        self.emg_fifo.append(sample)
        self._filtered_fifo.append(dsp.filter_apply(self._hp, self._state, sample[None, :])[0])
        if len(self.emg_fifo) < self.emg_fifo.maxlen:
            return None
        window = np.array(self._filtered_fifo)
        raw = self.estimator.model.predict_one(dsp.window_features(window, self.estimator.mvc.x_mvc))
        self.force_buffer.append(raw)
        if len(self.force_buffer) < self.buffer_size:
            return None
        mean = float(np.mean(np.array(self.force_buffer)))
        self.force_buffer = []
        self._emitted.append(mean)
        smoothed = float(np.mean(np.array(self._emitted)))
        value = min(max(smoothed, 0.0), self.f_cap_n)
        return ForceReference(value=value, timestamp=index / self.estimator.sample_rate_hz,
                              sample_index=index, raw_mean=mean)

    def replay(self, trial: ds.TrialRecording) -> list[ForceReference]:
        self.estimator._check_channels(trial.n_channels)
        out = []
        for row in trial.emg:
            ref = self.push(row)
            if ref is not None:
                out.append(ref)
        return out


def batch_references(estimator: ForceEstimator, trial: ds.TrialRecording, buffer_size: int | None = None,
                     smoothing_width: int = SMOOTHING_WIDTH, f_cap_n: float = GRIPPER_MAX_FORCE_N):
    """Offline recomputation of what :meth:`OnlinePredictor.replay` emits.

    Returns ``(sample_indices, values)``.
    """
    b = buffer_size or force_buffer_size(estimator.sample_rate_hz)
    ends, preds = estimator.predict_windows(trial, stride=1)
    n_out = len(preds) // b
    means = np.array([np.mean(preds[j * b:(j + 1) * b]) for j in range(n_out)])
    smoothed = dsp.moving_average(means, smoothing_width) if n_out else means
    values = np.clip(smoothed, 0.0, f_cap_n)
    idx = ends[b - 1::b][:n_out] if n_out else ends[:0]
    return idx, values


def emission_count(length: int, window_len: int, buffer_size: int) -> int:
    return max(0, length - window_len + 1) // buffer_size


def write_references(path, refs) -> None:
    lines = ["timestamp_s,force_n"] + [f"{float(r.timestamp)!r},{float(r.value)!r}" for r in refs]
    Path(path).write_text("\n".join(lines) + "\n")


def read_references(path) -> list[ForceReference]:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "timestamp_s,force_n":
        raise ParseError(f"{path}: line 1: expected header 'timestamp_s,force_n'")
    refs = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            t, f = (float(v) for v in line.split(","))
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from exc
        refs.append(ForceReference(value=f, timestamp=t, sample_index=lineno - 2, raw_mean=f))
    return refs

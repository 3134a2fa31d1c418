"""Trial recordings, synthetic data, MVC calibration, windowing and splits.

The synthetic generator stands in for the human subject and the two
fingertip force sensors.  One latent activation ``a(t)`` in ``[0, 1]`` drives
both sides: every EMG channel is ``gain_c * a(t) * n_c(t)`` with ``n_c`` a
unit-variance noise confined to ``noise_band_hz``, and the normal fingertip
force is ``f_max_n * a(t - emd)**1.5`` plus white sensor noise.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .errors import ArgumentError, CalibrationError, ConfigurationError, ParseError, ProtocolError

RAMP_DURATION_S = 10.0
MVC_HOLD_S = 2.0
MVC_WINDOW_S = 0.4
MVC_REPEAT_TOLERANCE = 0.05
FORCE_LOWPASS_HZ = 15.0
FORCE_LOWPASS_ORDER = 2


@dataclass(frozen=True)
class SynthConfig:
    n_channels: int = 8
    sample_rate_hz: float = 200.0
    f_max_n: float = 8.0
    emd_ms: float = 50.0
    gain_vector: tuple[float, ...] | None = None
    noise_band_hz: tuple[float, float] = (20.0, 90.0)
    label_noise_n: float = 0.02
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.noise_band_hz
        if not (0.0 < lo < hi < 0.5 * self.sample_rate_hz):
            raise ConfigurationError(
                f"noise band {self.noise_band_hz} must satisfy 0 < low < high < {0.5 * self.sample_rate_hz}")
        if self.emd_ms < 0:
            raise ConfigurationError("emd_ms must be >= 0")
        if self.n_channels < 1:
            raise ConfigurationError("n_channels must be >= 1")
        if self.gain_vector is not None:
            if len(self.gain_vector) != self.n_channels or min(self.gain_vector) <= 0:
                raise ConfigurationError("gain_vector needs n_channels positive entries")

    @property
    def gains(self) -> np.ndarray:
        if self.gain_vector is not None:
            return np.asarray(self.gain_vector, dtype=float)
        # fixed, uneven electrode pickup so channels are not interchangeable
        return np.linspace(0.6, 1.4, self.n_channels)


@dataclass(frozen=True)
class TrialRecording:
    sample_rate_hz: float
    emg: np.ndarray           # (T, C)
    force_thumb: np.ndarray   # (T, 3), newtons
    force_index: np.ndarray   # (T, 3), newtons
    kind: str = "ramp"

    def __post_init__(self):
        n = self.emg.shape[0]
        if self.emg.ndim != 2:
            raise ArgumentError("emg must be a (T, C) array")
        for name in ("force_thumb", "force_index"):
            arr = getattr(self, name)
            if arr.shape != (n, 3):
                raise ArgumentError(f"{name} has shape {arr.shape}, expected ({n}, 3)")

    def __len__(self) -> int:
        return self.emg.shape[0]

    @property
    def n_channels(self) -> int:
        return self.emg.shape[1]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    @property
    def time_s(self) -> np.ndarray:
        return np.arange(len(self)) / self.sample_rate_hz


@dataclass(frozen=True)
class MvcProfile:
    x_mvc: np.ndarray
    peak_forces: tuple[float, ...] = ()
    repeat_required: bool = False

    def __post_init__(self):
        x = np.asarray(self.x_mvc, dtype=float)
        if x.ndim != 1 or x.size == 0 or np.any(~(x > 0)):
            raise CalibrationError(f"MVC profile entries must all be positive, got {x}")
        object.__setattr__(self, "x_mvc", x)

    @property
    def n_channels(self) -> int:
        return self.x_mvc.size


@dataclass
class LabeledWindow:
    raw_window: np.ndarray  # (W, C)
    label_force: float
    end_index: int


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)


# -- synthesis ---------------------------------------------------------------

def _smooth_ramp(u: np.ndarray) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * u))


def profile_params(profile: str, rng: np.random.Generator, level: float = 0.5) -> dict:
    """Draw the per-trial shape parameters of an activation protocol."""
    if profile == "ramp":
        return {"profile": profile, "warp": rng.uniform(0.8, 1.25), "duration": RAMP_DURATION_S}
    if profile == "mvc":
        rise = rng.uniform(3.0, 4.0)
        lead, release = 0.5, 0.5
        return {"profile": profile, "lead": lead, "rise": rise, "release": release,
                "duration": lead + rise + MVC_HOLD_S + release}
    if profile == "hold":
        return {"profile": profile, "level": level, "duration": 6.0}
    raise ArgumentError(f"unknown activation profile {profile!r}")


def activation(params: dict, t: np.ndarray) -> np.ndarray:
    """Latent activation in [0, 1]; zero before t = 0."""
    t = np.asarray(t, dtype=float)
    kind = params["profile"]
    if kind == "ramp":
        a = _smooth_ramp(np.clip(t / params["duration"], 0.0, None) ** params["warp"])
    elif kind == "mvc":
        top = params["lead"] + params["rise"] + MVC_HOLD_S
        a = _smooth_ramp((t - params["lead"]) / params["rise"])
        a = np.where(t > top, _smooth_ramp(1.0 - (t - top) / params["release"]), a)
    else:
        a = params["level"] * _smooth_ramp(t / 2.0)
    return np.where(t < 0, 0.0, a)


def _band_noise(rng: np.random.Generator, n: int, n_channels: int, fs: float, band) -> np.ndarray:
    white = rng.standard_normal((n, n_channels))
    spec = np.fft.rfft(white, axis=0)
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    spec[(freqs < band[0]) | (freqs > band[1])] = 0.0
    noise = np.fft.irfft(spec, n=n, axis=0)
    noise -= noise.mean(axis=0)
    return noise / noise.std(axis=0)


def synth_trial(config: SynthConfig, profile: str = "ramp", seed: int | None = None,
                level: float = 0.5) -> TrialRecording:
    """Deterministic synthetic trial.  ``level`` only applies to ``hold``."""
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    fs = config.sample_rate_hz
    params = profile_params(profile, rng, level)
    n = int(round(params["duration"] * fs))
    t = np.arange(n) / fs
    a = activation(params, t)
    a_force = activation(params, t - config.emd_ms / 1000.0)

    noise = _band_noise(rng, n, config.n_channels, fs, config.noise_band_hz)
    emg = config.gains[None, :] * a[:, None] * noise

    force = config.f_max_n * np.clip(a_force, 0.0, None) ** 1.5
    thumb = rng.normal(0.0, config.label_noise_n, (n, 3))
    index = rng.normal(0.0, config.label_noise_n, (n, 3))
    thumb[:, 2] += force
    index[:, 2] += force
    return TrialRecording(sample_rate_hz=fs, emg=emg, force_thumb=thumb, force_index=index, kind=profile)


# -- labels and calibration ----------------------------------------------------

def normal_force_magnitude(force_thumb, force_index) -> np.ndarray:
    """Unfiltered mean of the two fingertips' normal (z) force magnitudes."""
    force_thumb = np.asarray(force_thumb, dtype=float)
    force_index = np.asarray(force_index, dtype=float)
    if force_thumb.shape != force_index.shape:
        raise ArgumentError(f"fingertip series differ in shape: {force_thumb.shape} vs {force_index.shape}")
    return 0.5 * (np.abs(force_thumb[:, 2]) + np.abs(force_index[:, 2]))


def gripping_force(force_thumb, force_index, sample_rate_hz: float) -> np.ndarray:
    """Scalar label: mean normal force, causally low-passed at 15 Hz."""
    raw = normal_force_magnitude(force_thumb, force_index)
    lp = dsp.design_butterworth(FORCE_LOWPASS_ORDER, FORCE_LOWPASS_HZ, sample_rate_hz, "lowpass")
    return dsp.filter_apply(lp, dsp.FilterState.zeros(lp), raw)


def trial_labels(trial: TrialRecording) -> np.ndarray:
    return gripping_force(trial.force_thumb, trial.force_index, trial.sample_rate_hz)


def peaks_disagree(peaks, tolerance: float = MVC_REPEAT_TOLERANCE) -> bool:
    """True when any two peak forces differ by more than ``tolerance`` (relative to the smaller)."""
    peaks = [float(p) for p in peaks]
    lo, hi = min(peaks), max(peaks)
    return (hi - lo) > tolerance * lo


def compute_mvc(mvc_trials, hp: dsp.FilterCoeffs | None = None) -> MvcProfile:
    """Per-channel MVC denominators from at least three calibration trials.

    For each trial the peak of the gripping force is located and the EMG RMS
    is taken over a 400 ms window centred on it.  If ``hp`` is given the EMG
    is high-passed first, matching what the features will see.  The profile
    keeps the per-channel maximum across trials and records whether the peak
    forces disagreed by more than 5 %, in which case another trial is due.
    """
    trials = list(mvc_trials)
    if len(trials) < 3:
        raise ProtocolError(f"MVC protocol needs at least 3 trials, got {len(trials)}")
    rms_rows, peaks = [], []
    for trial in trials:
        fs = trial.sample_rate_hz
        force = normal_force_magnitude(trial.force_thumb, trial.force_index)
        peak_idx = int(np.argmax(force))
        peaks.append(float(force[peak_idx]))
        emg = trial.emg
        if hp is not None:
            emg = dsp.filter_apply(hp, dsp.FilterState.zeros(hp, trial.n_channels), emg)
        half = int(round(MVC_WINDOW_S * fs / 2))
        lo, hi = max(0, peak_idx - half), min(len(trial), peak_idx + half)
        rms_rows.append(dsp.rms(emg[lo:hi], axis=0))
    x_mvc = np.max(np.vstack(rms_rows), axis=0)
    if np.any(x_mvc <= 0):
        raise CalibrationError(f"zero EMG RMS at the MVC peak on channel(s) {np.flatnonzero(x_mvc <= 0) + 1}")
    return MvcProfile(x_mvc=x_mvc, peak_forces=tuple(peaks), repeat_required=peaks_disagree(peaks))


# -- windowing -----------------------------------------------------------------

def window_count(length: int, window: int, stride: int) -> int:
    return 0 if length < window else (length - window) // stride + 1


def window_end_indices(length: int, window: int, stride: int) -> np.ndarray:
    return np.arange(window_count(length, window, stride)) * stride + window - 1


def ms_to_samples(ms: float, sample_rate_hz: float) -> int:
    return int(round(ms * sample_rate_hz / 1000.0))


def segment(trial: TrialRecording, labels, window_ms: float = 200.0, stride_ms: float = 10.0) -> list[LabeledWindow]:
    """Sliding windows labelled with the force at each window's last sample."""
    w = ms_to_samples(window_ms, trial.sample_rate_hz)
    s = max(1, ms_to_samples(stride_ms, trial.sample_rate_hz))
    labels = np.asarray(labels, dtype=float)
    return [LabeledWindow(raw_window=trial.emg[end - w + 1:end + 1], label_force=float(labels[end]), end_index=int(end))
            for end in window_end_indices(len(trial), w, s)]


def featurize(trial: TrialRecording, x_mvc, hp: dsp.FilterCoeffs, window_ms: float = 200.0,
              stride_ms: float = 10.0, labels=None):
    """Batch features for every window of a trial: ``(features, labels, end_indices)``.

    The trial is high-passed once, causally and from a zero state, exactly as
    the streaming predictor sees it; features are then taken per window.
    """
    x_mvc = np.asarray(getattr(x_mvc, "x_mvc", x_mvc), dtype=float)
    if x_mvc.shape[0] != trial.n_channels:
        raise ConfigurationError(f"MVC profile has {x_mvc.shape[0]} channels, trial has {trial.n_channels}")
    labels = trial_labels(trial) if labels is None else np.asarray(labels, dtype=float)
    w = ms_to_samples(window_ms, trial.sample_rate_hz)
    s = max(1, ms_to_samples(stride_ms, trial.sample_rate_hz))
    ends = window_end_indices(len(trial), w, s)
    filtered = dsp.filter_apply(hp, dsp.FilterState.zeros(hp, trial.n_channels), trial.emg)
    feats = np.array([dsp.window_features(filtered[e - w + 1:e + 1], x_mvc) for e in ends]).reshape(len(ends), -1)
    return feats, labels[ends], ends


def stack_features(trials, x_mvc, hp, window_ms: float = 200.0, stride_ms: float = 10.0):
    """Concatenate :func:`featurize` over trials, preserving trial order."""
    parts = [featurize(t, x_mvc, hp, window_ms, stride_ms)[:2] for t in trials]
    return np.vstack([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def split(trials, ratio=(7, 2, 1)) -> DatasetSplit:
    """Whole-trial split; the default reproduces #1-#7 / #8-#9 / #10."""
    trials = list(trials)
    n = len(trials)
    if n < 3:
        raise ArgumentError(f"need at least 3 trials to split, got {n}")
    total = sum(ratio)
    n_val = max(1, int(round(n * ratio[1] / total)))
    n_test = max(1, int(round(n * ratio[2] / total)))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise ArgumentError(f"{n} trials leave no training data with ratio {ratio}")
    return DatasetSplit(train=trials[:n_train], validation=trials[n_train:n_train + n_val],
                        test=trials[n_train + n_val:])


# -- persistence ---------------------------------------------------------------

def _columns(n_channels: int) -> list[str]:
    return (["time_s"] + [f"emg_{c + 1}" for c in range(n_channels)]
            + [f"thumb_{a}" for a in "xyz"] + [f"index_{a}" for a in "xyz"])


def save_trial(path, trial: TrialRecording) -> None:
    path = Path(path)
    data = np.column_stack([trial.time_s, trial.emg, trial.force_thumb, trial.force_index])
    with path.open("w", newline="") as fh:
        fh.write(f"# sample_rate_hz={float(trial.sample_rate_hz)!r},kind={trial.kind},n_channels={trial.n_channels}\n")
        fh.write(",".join(_columns(trial.n_channels)) + "\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_trial(path) -> TrialRecording:
    path = Path(path)
    with path.open(newline="") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: line 1: empty file")
    meta_line = lines[0]
    if not meta_line.startswith("#"):
        raise ParseError(f"{path}: line 1: missing '# sample_rate_hz=...,kind=...' header")
    meta = {}
    for item in meta_line[1:].strip().split(","):
        key, sep, value = item.partition("=")
        if not sep:
            raise ParseError(f"{path}: line 1: malformed header item {item!r}")
        meta[key.strip()] = value.strip()
    try:
        fs = float(meta["sample_rate_hz"])
        kind = meta.get("kind", "ramp")
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{path}: line 1: bad or missing sample_rate_hz") from exc
    if len(lines) < 2:
        raise ParseError(f"{path}: line 2: missing column header")
    header = next(csv.reader([lines[1]]))
    n_emg = sum(1 for h in header if h.startswith("emg_"))
    if "n_channels" in meta:
        n_emg = int(meta["n_channels"])
    expected = _columns(n_emg)
    for name in expected:
        if name not in header:
            raise ParseError(f"{path}: line 2: missing column {name!r}")
    order = [header.index(name) for name in expected]
    rows = []
    for lineno, row in enumerate(csv.reader(lines[2:]), start=3):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            rows.append([float(row[i]) for i in order])
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: no data rows")
    data = np.array(rows)
    return TrialRecording(sample_rate_hz=fs, emg=data[:, 1:1 + n_emg],
                          force_thumb=data[:, 1 + n_emg:4 + n_emg], force_index=data[:, 4 + n_emg:7 + n_emg],
                          kind=kind)


def save_mvc(path, profile: MvcProfile) -> None:
    Path(path).write_text(",".join(repr(float(v)) for v in profile.x_mvc) + "\n")


def load_mvc(path) -> MvcProfile:
    path = Path(path)
    text = path.read_text().strip()
    if not text:
        raise ParseError(f"{path}: line 1: empty MVC file")
    try:
        values = [float(v) for v in text.splitlines()[0].split(",")]
    except ValueError as exc:
        raise ParseError(f"{path}: line 1: {exc}") from exc
    return MvcProfile(x_mvc=np.array(values))

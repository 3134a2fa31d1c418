"""Causal signal-processing primitives for sEMG and force channels.

Filters are Butterworth designs realised as cascaded biquads (second-order
sections).  Coefficients come from the analog prototype through the bilinear
transform with the cutoff pre-warped, so the digital response is exactly
-3.01 dB at ``cutoff_hz``.  All filtering runs forward only; a
:class:`FilterState` carries the delay registers so that a stream split into
chunks filters to the same bits as the whole stream.

Arrays are time-major: a single channel is shape ``(T,)`` and a multichannel
block is ``(T, C)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, CalibrationError, ConfigurationError, DesignError


@dataclass(frozen=True)
class SignalSeries:
    """Uniformly sampled series; ``samples`` is ``(T,)`` or ``(T, C)``."""

    sample_rate_hz: float
    samples: np.ndarray

    def __post_init__(self):
        if not self.sample_rate_hz > 0:
            raise ArgumentError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=float))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


@dataclass(frozen=True)
class FilterCoeffs:
    """Biquad cascade. ``sos`` rows are ``(b0, b1, b2, a1, a2)`` with a0 = 1."""

    sos: np.ndarray
    kind: str
    order: int
    cutoff_hz: float
    sample_rate_hz: float

    @property
    def n_sections(self) -> int:
        return self.sos.shape[0]

    def response(self, freqs_hz) -> np.ndarray:
        """Complex frequency response evaluated on the unit circle."""
        w = 2.0 * np.pi * np.asarray(freqs_hz, dtype=float) / self.sample_rate_hz
        z1 = np.exp(-1j * w)
        z2 = z1 * z1
        h = np.ones_like(z1)
        for b0, b1, b2, a1, a2 in self.sos:
            h = h * (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2)
        return h

    def dc_gain(self) -> float:
        return float(np.prod(self.sos[:, :3].sum(axis=1) / (1.0 + self.sos[:, 3] + self.sos[:, 4])))


@dataclass
class FilterState:
    """Delay registers, shape ``(n_sections, 2)`` or ``(n_sections, 2, C)``."""

    z: np.ndarray = field(repr=False)

    @classmethod
    def zeros(cls, coeffs: FilterCoeffs, n_channels: int | None = None) -> "FilterState":
        shape = (coeffs.n_sections, 2) if n_channels is None else (coeffs.n_sections, 2, n_channels)
        return cls(np.zeros(shape))

    @classmethod
    def steady(cls, coeffs: FilterCoeffs, level) -> "FilterState":
        """State the cascade would hold after a long constant input ``level``.

        ``level`` is a scalar or a per-channel vector.
        """
        u = np.asarray(level, dtype=float)
        z = np.zeros((coeffs.n_sections, 2) + u.shape)
        for i, (b0, b1, b2, a1, a2) in enumerate(coeffs.sos):
            y = u * (b0 + b1 + b2) / (1.0 + a1 + a2)
            z[i, 0] = y - b0 * u
            z[i, 1] = b2 * u - a2 * y
            u = y
        return cls(z)

    def reset(self) -> None:
        self.z[...] = 0.0


def design_butterworth(order: int, cutoff_hz: float, sample_rate_hz: float, kind: str = "lowpass") -> FilterCoeffs:
    """Digital Butterworth low/high-pass as biquads, bilinear transform with pre-warping.

    Each conjugate pole pair of the normalised analog prototype,
    ``1 / (s^2 + 2 sin(theta_k) s + 1)``, is mapped with
    ``s = c (1 - z^-1) / (1 + z^-1)``, ``c = 1 / tan(pi fc / fs)``.
    """
    if kind not in ("lowpass", "highpass"):
        raise ArgumentError(f"unknown filter kind {kind!r}")
    if order % 2 != 0:
        raise DesignError(f"unsupported order {order}: only even orders are realised as biquads")
    if order not in (2, 4, 6, 8):
        raise DesignError(f"unsupported order {order}: expected one of 2, 4, 6, 8")
    nyquist = 0.5 * sample_rate_hz
    if not (0.0 < cutoff_hz < nyquist):
        raise DesignError(f"cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) Hz")

    c = 1.0 / math.tan(math.pi * cutoff_hz / sample_rate_hz)
    c2 = c * c
    sections = []
    for k in range(1, order // 2 + 1):
        damp = 2.0 * math.sin((2 * k - 1) * math.pi / (2 * order))
        a0 = c2 + damp * c + 1.0
        a1 = (2.0 - 2.0 * c2) / a0
        a2 = (c2 - damp * c + 1.0) / a0
        if kind == "lowpass":
            b = np.array([1.0, 2.0, 1.0]) / a0
        else:
            b = np.array([c2, -2.0 * c2, c2]) / a0
        sections.append([b[0], b[1], b[2], a1, a2])
    sos = np.array(sections)
    for _, _, _, a1, a2 in sos:
        if np.max(np.abs(np.roots([1.0, a1, a2]))) >= 1.0:
            raise DesignError("designed section is unstable")
    return FilterCoeffs(sos=sos, kind=kind, order=order, cutoff_hz=float(cutoff_hz),
                        sample_rate_hz=float(sample_rate_hz))


def filter_apply(coeffs: FilterCoeffs, state: FilterState, x) -> np.ndarray:
    """Filter ``x`` (``(T,)`` or ``(T, C)``) through the cascade, updating ``state``.

    Transposed direct form II, one sample at a time.  The per-sample
    arithmetic does not depend on chunk boundaries, which is what makes
    chunked and one-shot application agree bit-for-bit.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[0] == 0:
        raise ArgumentError("cannot filter an empty series")
    if state.z.shape[2:] != x.shape[1:]:
        raise ConfigurationError(
            f"filter state channel shape {state.z.shape[2:]} does not match input {x.shape[1:]}")
    y = np.array(x, copy=True)
    z = state.z
    for i, (b0, b1, b2, a1, a2) in enumerate(coeffs.sos):
        z1 = z[i, 0]
        z2 = z[i, 1]
        for t in range(y.shape[0]):
            xt = y[t]
            yt = b0 * xt + z1
            z1 = b1 * xt - a1 * yt + z2
            z2 = b2 * xt - a2 * yt
            y[t] = yt
        z[i, 0] = z1
        z[i, 1] = z2
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("non-finite value produced while filtering")
    return y


def rectify(x) -> np.ndarray:
    return np.abs(np.asarray(x, dtype=float))


def normalize_mvc(x, x_mvc) -> np.ndarray:
    """Divide by the MVC denominator (scalar or per-channel vector)."""
    x_mvc = np.asarray(x_mvc, dtype=float)
    if np.any(~(x_mvc > 0)):
        raise CalibrationError(f"MVC denominator must be positive, got {x_mvc}")
    return np.asarray(x, dtype=float) / x_mvc


def rms(window, axis: int = 0):
    """Root mean square along ``axis``; per-channel for a ``(W, C)`` block."""
    w = np.asarray(window, dtype=float)
    if w.size == 0 or w.shape[axis] == 0:
        raise ArgumentError("rms of an empty window")
    return np.sqrt(np.mean(w * w, axis=axis))


def window_features(filtered_window, x_mvc) -> np.ndarray:
    """Rectify, MVC-normalise and take per-channel RMS of an already high-passed block."""
    return rms(normalize_mvc(rectify(filtered_window), x_mvc), axis=0)


def extract_features(window, mvc, hp: FilterCoeffs) -> np.ndarray:
    """Feature vector for one isolated raw window of shape ``(W, C)``.

    The high-pass starts from the steady state of the window mean, so a DC
    offset contributes no start-up transient.  Streaming code that carries
    filter state across windows should use :func:`window_features` instead.
    """
    window = np.asarray(window, dtype=float)
    x_mvc = getattr(mvc, "x_mvc", mvc)
    x_mvc = np.asarray(x_mvc, dtype=float)
    if window.ndim != 2 or window.shape[1] != x_mvc.shape[0]:
        raise ConfigurationError(
            f"window has shape {window.shape}, expected (W, {x_mvc.shape[0]}) to match the MVC profile")
    state = FilterState.steady(hp, window.mean(axis=0))
    return window_features(filter_apply(hp, state, window), x_mvc)


def moving_average(x, width: int) -> np.ndarray:
    """Causal trailing mean over the last ``min(width, t + 1)`` samples."""
    if width < 1:
        raise ArgumentError(f"moving-average width must be >= 1, got {width}")
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for t in range(x.shape[0]):
        out[t] = np.mean(x[max(0, t - width + 1):t + 1], axis=0)
    return out


@dataclass(frozen=True)
class Spectrum:
    frequencies_hz: np.ndarray
    power: np.ndarray  # one-sided density, units^2 / Hz

    @property
    def resolution_hz(self) -> float:
        return float(self.frequencies_hz[1] - self.frequencies_hz[0])

    def bin_power(self) -> np.ndarray:
        """Power per bin; sums to the mean square of the analysed series."""
        return self.power * self.resolution_hz

    def fraction_below(self, freq_hz: float) -> float:
        p = self.bin_power()
        return float(p[self.frequencies_hz < freq_hz].sum() / p.sum())

    def peak_hz(self, ignore_dc: bool = True) -> float:
        p = self.power.copy()
        if ignore_dc:
            p[0] = -1.0
        return float(self.frequencies_hz[int(np.argmax(p))])


def psd(x, sample_rate_hz: float, nfft: int | None = None) -> Spectrum:
    """Rectangular-window periodogram via the real FFT.

    Odd-length input is zero-padded by one sample so the last bin sits at
    Nyquist.  Scaling is normalised by the unpadded length, so
    ``bin_power().sum()`` equals ``mean(x**2)``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 16:
        raise ArgumentError(f"psd needs at least 16 samples, got {n}")
    if nfft is None:
        nfft = n + (n % 2)
    if nfft < n or nfft % 2:
        raise ArgumentError(f"nfft must be even and >= {n}, got {nfft}")
    spec = np.fft.rfft(x, n=nfft)
    power = (np.abs(spec) ** 2) / (sample_rate_hz * n)
    power[1:-1] *= 2.0
    freqs = np.fft.rfftfreq(nfft, d=1.0 / sample_rate_hz)
    return Spectrum(frequencies_hz=freqs, power=power)

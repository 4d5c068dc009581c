"""Excitation signals: logarithmic FM chirps, reference tones, matched kernels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import windows

from .errors import ParameterError


@dataclass
class Waveform:
    """A sampled excitation signal with its generation parameters.

    `params` records how the samples were made (kind plus arguments) so a
    waveform can be regenerated from serialized metadata.
    """

    samples: np.ndarray
    fs: float
    f_start: float
    f_end: float
    duration: float
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ParameterError("waveform samples must be a non-empty vector")
        if np.max(np.abs(self.samples)) > 1.0 + 1e-12:
            raise ParameterError("waveform samples must stay within [-1, 1]")

    def __len__(self) -> int:
        return self.samples.size


def log_fm_chirp(f_start: float, f_end: float, duration: float, fs: float,
                 taper_fraction: float = 0.1) -> Waveform:
    """Exponential sweep from f_start to f_end with a Tukey edge taper.

    The phase law is phi(t) = 2*pi*f_start*T/ln(r) * (exp(t*ln(r)/T) - 1)
    with r = f_end/f_start, so the instantaneous frequency runs from exactly
    f_start at t=0 to f_end at t=T.
    """
    if not 0 < f_start < f_end:
        raise ParameterError("need 0 < f_start < f_end")
    if f_end >= fs / 2:
        raise ParameterError(f"f_end {f_end} violates Nyquist for fs {fs}")
    if duration <= 0:
        raise ParameterError("duration must be positive")
    if not 0 <= taper_fraction <= 0.5:
        raise ParameterError("taper_fraction must be in [0, 0.5]")
    n = round(duration * fs)
    if n < 2:
        raise ParameterError("duration too short for the sample rate")
    t = np.arange(n) / fs
    k = np.log(f_end / f_start)
    phase = 2.0 * np.pi * f_start * duration / k * (np.exp(t * k / duration) - 1.0)
    taper = windows.tukey(n, alpha=2.0 * taper_fraction)
    samples = taper * np.sin(phase)
    return Waveform(samples, fs, f_start, f_end, duration,
                    params={"kind": "log_fm_chirp", "f_start": f_start,
                            "f_end": f_end, "duration": duration, "fs": fs,
                            "taper_fraction": taper_fraction})


def sine(frequency: float, duration: float, fs: float) -> Waveform:
    """Constant tone at full amplitude."""
    if not 0 < frequency < fs / 2:
        raise ParameterError(f"frequency {frequency} violates Nyquist for fs {fs}")
    if duration <= 0:
        raise ParameterError("duration must be positive")
    n = round(duration * fs)
    if n < 1:
        raise ParameterError("duration too short for the sample rate")
    t = np.arange(n) / fs
    samples = np.sin(2.0 * np.pi * frequency * t)
    return Waveform(samples, fs, frequency, frequency, duration,
                    params={"kind": "sine", "frequency": frequency,
                            "duration": duration, "fs": fs})


def waveform_from_params(params: dict) -> Waveform:
    """Regenerate a waveform from its recorded generation parameters."""
    kind = params.get("kind")
    if kind == "log_fm_chirp":
        return log_fm_chirp(params["f_start"], params["f_end"],
                            params["duration"], params["fs"],
                            params.get("taper_fraction", 0.1))
    if kind == "sine":
        return sine(params["frequency"], params["duration"], params["fs"])
    raise ParameterError(f"unknown waveform kind {kind!r}")


def matched_kernel(w: Waveform) -> np.ndarray:
    """Time-reversed copy of the waveform, scaled to unit L2 norm."""
    s = w.samples
    if s.size == 0:
        raise ParameterError("cannot build a kernel from an empty waveform")
    norm = np.linalg.norm(s)
    if norm == 0:
        raise ParameterError("cannot normalize an all-zero waveform")
    return s[::-1] / norm


def waveform_to_csv(w: Waveform) -> str:
    """One sample per line, 9 significant digits, '#'-prefixed header."""
    lines = [f"# fs_hz={w.fs:.9g} f_start_hz={w.f_start:.9g} "
             f"f_end_hz={w.f_end:.9g} duration_s={w.duration:.9g}"]
    lines.extend(f"{v:.9g}" for v in w.samples)
    return "\n".join(lines) + "\n"

"""The processing chain: FFT convolution, matched filtering, delay-and-sum
beamforming, envelope detection, and the full measurement-to-image pipeline.

Stage order is fixed: decode -> optional matched filter -> beamform ->
optional envelope. Every stage is pure and index-deterministic, so the same
measurement and config always produce a bit-identical image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

from . import pdm
from ._kernels import delay_and_sum_accumulate
from .arrays import DelayTable, DirectionGrid, MicArray, steering_delays
from .errors import ParameterError
from .waveform import Waveform, matched_kernel

_ENVELOPE_CHUNK_ELEMS = 8_000_000


def fft_convolve(x: np.ndarray, h: np.ndarray, mode: str = "full") -> np.ndarray:
    """Linear convolution via real FFTs.

    `same` returns the centered len(x) window of the full convolution,
    i.e. full[(len(h)-1)//2 :][: len(x)].
    """
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.ndim != 1 or h.ndim != 1 or x.size == 0 or h.size == 0:
        raise ParameterError("fft_convolve needs two non-empty vectors")
    if mode not in ("full", "same"):
        raise ParameterError(f"unknown mode {mode!r}")
    n, L = x.size, h.size
    nfft = scipy.fft.next_fast_len(n + L - 1)
    full = np.fft.irfft(np.fft.rfft(x, nfft) * np.fft.rfft(h, nfft), nfft)
    full = full[:n + L - 1]
    if mode == "full":
        return full
    start = (L - 1) // 2
    return full[start:start + n]


def matched_filter(signals: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Convolve every channel with the kernel, 'same' centering.

    Channels are independent rows; the whole batch runs through one set of
    FFTs along the last axis.
    """
    signals = np.atleast_2d(np.asarray(signals, dtype=np.float64))
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 1 or kernel.size == 0:
        raise ParameterError("kernel must be a non-empty vector")
    n = signals.shape[1]
    L = kernel.size
    if L > n:
        raise ParameterError(f"kernel length {L} exceeds signal length {n}")
    nfft = scipy.fft.next_fast_len(n + L - 1)
    spec = np.fft.rfft(signals, nfft, axis=1) * np.fft.rfft(kernel, nfft)
    full = np.fft.irfft(spec, nfft, axis=1)
    start = (L - 1) // 2
    return full[:, start:start + n]


def delay_and_sum(signals: np.ndarray, table: DelayTable) -> np.ndarray:
    """out[d, t] = mean over mics of signals[m, t + delays[d, m]].

    Reads past the capture end are zero; output shape is
    (n_directions, n_samples).
    """
    signals = np.ascontiguousarray(np.atleast_2d(signals), dtype=np.float64)
    n_mics, n_samples = signals.shape
    if table.delays.shape[1] != n_mics:
        raise ParameterError(
            f"delay table expects {table.delays.shape[1]} channels, "
            f"got {n_mics}")
    if table.max_delay >= n_samples:
        raise ParameterError(
            f"max delay {table.max_delay} outside capture of {n_samples}")
    out = np.zeros((table.delays.shape[0], n_samples))
    delay_and_sum_accumulate(signals, np.ascontiguousarray(table.delays), out)
    return out


def envelope(x: np.ndarray) -> np.ndarray:
    """Magnitude of the analytic signal along the last axis.

    Built in the frequency domain: the positive-frequency half of the
    spectrum yields the quadrature component, and |x + j*q| is the envelope.
    Large batches are processed in row chunks to bound memory.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ParameterError("envelope needs a non-empty input")
    single = x.ndim == 1
    rows = np.atleast_2d(x)
    n = rows.shape[1]
    out = np.empty_like(rows)
    chunk = max(1, _ENVELOPE_CHUNK_ELEMS // n)
    # rfft bin multipliers for the Hilbert quadrature: -j on strictly
    # positive non-Nyquist bins, 0 at DC and Nyquist
    mult = np.full(n // 2 + 1, -1j)
    mult[0] = 0.0
    if n % 2 == 0:
        mult[-1] = 0.0
    for lo in range(0, rows.shape[0], chunk):
        block = rows[lo:lo + chunk]
        quad = np.fft.irfft(np.fft.rfft(block, axis=1) * mult, n, axis=1)
        out[lo:lo + chunk] = np.hypot(block, quad)
    return out[0] if single else out


@dataclass
class ProcessingConfig:
    """Which optional stages run, over which directions, at what constants."""

    grid: DirectionGrid
    matched_filter_enabled: bool = True
    envelope_enabled: bool = True
    sound_speed: float = 343.0
    decimation: int = pdm.DECIMATION

    def __post_init__(self):
        if self.decimation < 1:
            raise ParameterError("decimation must be >= 1")
        if self.sound_speed <= 0:
            raise ParameterError("sound_speed must be positive")

    def to_doc(self) -> dict:
        grid_doc = {"kind": self.grid.kind}
        if self.grid.params:
            grid_doc.update(self.grid.params)
        else:
            grid_doc["directions"] = self.grid.directions.tolist()
        return {"matched_filter": self.matched_filter_enabled,
                "envelope": self.envelope_enabled,
                "grid": grid_doc,
                "sound_speed": self.sound_speed,
                "decimation": self.decimation}


@dataclass
class AcousticImage:
    """Intensity over (direction, range sample).

    `group_delay_offset` is the constant number of decoded samples the
    pipeline has shifted echoes by (decode FIR delay plus matched-filter
    centering); subtract it from a sample index before converting to range.
    """

    intensity: np.ndarray  # (n_directions, n_range_samples)
    grid: DirectionGrid
    fs_decoded: float
    sound_speed: float
    group_delay_offset: int = 0

    def __post_init__(self):
        self.intensity = np.asarray(self.intensity, dtype=np.float64)
        if self.intensity.ndim != 2:
            raise ParameterError("intensity must be a 2-D matrix")
        if self.intensity.shape[0] != self.grid.n_directions:
            raise ParameterError("intensity rows must match grid size")

    @property
    def range_per_sample(self) -> float:
        """Two-way range covered by one decoded sample, meters."""
        return self.sound_speed / (2.0 * self.fs_decoded)

    @property
    def n_range_samples(self) -> int:
        return self.intensity.shape[1]


def process_measurement(m: pdm.Measurement, cfg: ProcessingConfig,
                        array: MicArray, excitation: Waveform) -> AcousticImage:
    """Run the full chain on one measurement.

    decode -> [matched filter] -> delay-and-sum -> [envelope], exactly in
    that order.
    """
    if array.n_mics != m.stream.n_channels:
        raise ParameterError(
            f"array has {array.n_mics} mics but the capture holds "
            f"{m.stream.n_channels} channels")
    fs_decoded = m.stream.fs_pdm / cfg.decimation
    signals = pdm.decode_measurement(m, cfg.decimation)
    offset = pdm.DECODE_GROUP_DELAY_SAMPLES
    if cfg.matched_filter_enabled:
        if abs(excitation.fs - fs_decoded) > 1e-6 * fs_decoded:
            raise ParameterError(
                f"excitation sampled at {excitation.fs} Hz but the decoded "
                f"rate is {fs_decoded} Hz")
        kernel = matched_kernel(excitation)
        signals = matched_filter(signals, kernel)
        offset += kernel.size // 2
    table = steering_delays(array, cfg.grid, cfg.sound_speed, fs_decoded)
    beams = delay_and_sum(signals, table)
    if cfg.envelope_enabled:
        beams = envelope(beams)
    return AcousticImage(beams, cfg.grid, fs_decoded, cfg.sound_speed,
                         group_delay_offset=offset)

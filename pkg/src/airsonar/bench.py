"""Scaling study: wall-clock time of the processing chain versus the number
of steered directions. Only the decode-to-image chain is timed; simulation
and I/O stay outside the clock."""

from __future__ import annotations

import json
import platform
import time
from dataclasses import dataclass, field

import numpy as np

from .arrays import MicArray, direction_grid_3d
from .dsp import ProcessingConfig, process_measurement
from .errors import ParameterError
from .pdm import Measurement
from .waveform import Waveform

DEFAULT_DIRECTION_COUNTS = (90, 1000, 3000, 4000)


@dataclass
class BenchReport:
    direction_counts: list[int]
    mean_ms: list[float]
    std_ms: list[float]
    median_ms: list[float]
    runs: int
    capture: dict
    host: str = field(default_factory=lambda: (
        f"{platform.platform()} python-{platform.python_version()}"))

    def to_json(self) -> str:
        doc = {"schema": "airsonar/bench/v1",
               "direction_counts": self.direction_counts,
               "mean_ms": self.mean_ms, "std_ms": self.std_ms,
               "median_ms": self.median_ms, "runs": self.runs,
               "capture": self.capture, "host": self.host}
        return json.dumps(doc, indent=2)

    def to_table(self) -> str:
        lines = [f"{'directions':>10}  {'mean ms':>10}  {'std ms':>9}  "
                 f"{'median ms':>10}   (runs={self.runs})"]
        for n, mean, std, med in zip(self.direction_counts, self.mean_ms,
                                     self.std_ms, self.median_ms):
            lines.append(f"{n:>10}  {mean:>10.2f}  {std:>9.2f}  {med:>10.2f}")
        return "\n".join(lines)


def bench_pipeline(direction_counts, runs: int, measurement: Measurement,
                   array: MicArray, excitation: Waveform,
                   sound_speed: float = 343.0,
                   max_polar: float = np.pi / 2) -> BenchReport:
    """Time process_measurement over hemisphere grids of the given sizes.

    The same measurement is reused for every run; each count gets one warm-up
    run excluded from the statistics. Matched filter and envelope stay on.
    """
    counts = [int(n) for n in direction_counts]
    if not counts:
        raise ParameterError("direction_counts must be non-empty")
    if runs < 2:
        raise ParameterError("need at least 2 timed runs per count")
    means, stds, medians = [], [], []
    for n in counts:
        cfg = ProcessingConfig(grid=direction_grid_3d(n, max_polar),
                               matched_filter_enabled=True,
                               envelope_enabled=True,
                               sound_speed=sound_speed)
        process_measurement(measurement, cfg, array, excitation)  # warm-up
        times = np.empty(runs)
        for r in range(runs):
            t0 = time.perf_counter()
            process_measurement(measurement, cfg, array, excitation)
            times[r] = time.perf_counter() - t0
        means.append(float(times.mean() * 1e3))
        stds.append(float(times.std() * 1e3))
        medians.append(float(np.median(times) * 1e3))
    capture = {"n_channels": measurement.stream.n_channels,
               "n_bits_per_channel": measurement.stream.n_bits_per_channel,
               "fs_pdm_hz": measurement.stream.fs_pdm}
    return BenchReport(counts, means, stds, medians, runs, capture)


def linear_fit_r2(counts, means) -> float:
    """Coefficient of determination of the straight-line fit mean(count)."""
    x = np.asarray(counts, dtype=np.float64)
    y = np.asarray(means, dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0:
        return 1.0
    return float(1.0 - np.sum(resid**2) / ss_tot)

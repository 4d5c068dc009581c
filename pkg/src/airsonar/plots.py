"""Figure rendering for the CLI report paths. Everything draws through the
Agg backend straight to files; nothing here opens a window."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .arrays import MicArray
from .bench import BenchReport, linear_fit_r2
from .dsp import AcousticImage
from .imaging import PointCloud
from .waveform import Waveform


def save_array_figure(array: MicArray, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    pos = array.mic_positions
    ax.scatter(pos[:, 0] * 1e3, pos[:, 1] * 1e3, s=40, label="microphones")
    ax.scatter([array.emitter_position[0] * 1e3],
               [array.emitter_position[1] * 1e3],
               marker="*", s=160, color="tab:red", label="emitter")
    ax.set_xlabel("x [mm]")
    ax.set_ylabel("y [mm]")
    ax.set_title(f"{array.layout_kind} array, {array.n_mics} mics")
    ax.axis("equal")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def save_waveform_figure(w: Waveform, path) -> None:
    fig, (top, bot) = plt.subplots(2, 1, figsize=(8, 6))
    t_ms = np.arange(w.samples.size) / w.fs * 1e3
    top.plot(t_ms, w.samples, lw=0.6)
    top.set_xlabel("time [ms]")
    top.set_ylabel("amplitude")
    top.set_title(f"excitation {w.f_start / 1e3:.0f}-{w.f_end / 1e3:.0f} kHz")
    spec = np.abs(np.fft.rfft(w.samples))
    freq = np.fft.rfftfreq(w.samples.size, 1.0 / w.fs)
    bot.plot(freq / 1e3, 20 * np.log10(np.maximum(spec, 1e-12) / spec.max()))
    bot.set_xlabel("frequency [kHz]")
    bot.set_ylabel("magnitude [dB]")
    bot.set_ylim(-80, 3)
    bot.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_image_figure(img: AcousticImage, path) -> None:
    fig, ax = plt.subplots(figsize=(9, 5))
    n_r = img.n_range_samples
    extent = [(0 - img.group_delay_offset) * img.range_per_sample,
              (n_r - img.group_delay_offset) * img.range_per_sample,
              img.grid.n_directions - 0.5, -0.5]
    shown = img.intensity
    ax.imshow(shown, aspect="auto", extent=extent, cmap="viridis",
              interpolation="nearest")
    ax.set_xlabel("range [m]")
    ax.set_ylabel("direction index")
    ax.set_title(f"acoustic image, {img.grid.n_directions} directions")
    fig.colorbar(ax.images[0], ax=ax, label="intensity")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def save_pointcloud_figure(cloud: PointCloud, path) -> None:
    fig = plt.figure(figsize=(7, 6))
    ax = fig.add_subplot(projection="3d")
    if len(cloud):
        p = cloud.positions
        sc = ax.scatter(p[:, 0], p[:, 2], p[:, 1], c=cloud.intensities,
                        cmap="viridis", s=30)
        fig.colorbar(sc, ax=ax, label="intensity", shrink=0.7)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("z [m]")
    ax.set_zlabel("y [m]")
    ax.set_title(f"pointcloud, {len(cloud)} points")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def save_bench_figure(report: BenchReport, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 5))
    x = np.asarray(report.direction_counts, dtype=np.float64)
    y = np.asarray(report.mean_ms)
    ax.errorbar(x, y, yerr=report.std_ms, fmt="o", capsize=4, label="mean")
    slope, intercept = np.polyfit(x, y, 1)
    xs = np.linspace(0, x.max() * 1.05, 50)
    r2 = linear_fit_r2(report.direction_counts, report.mean_ms)
    ax.plot(xs, slope * xs + intercept, "--",
            label=f"fit {slope:.3f} ms/direction, R²={r2:.4f}")
    ax.set_xlabel("directions")
    ax.set_ylabel("execution time [ms]")
    ax.set_title(f"pipeline scaling, {report.runs} runs per point")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)

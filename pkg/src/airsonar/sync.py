"""Multi-device synchronization: trigger schedules and in-band acoustic
markers.

A marker is a 13-chip Barker-coded burst (each chip 8 cycles of a 50 kHz
tone) mixed into channel 0 at half full scale and re-encoded. The marker id
0..15 is carried by the repetition count (id + 1 bursts separated by a fixed
gap), which keeps detection a single matched correlation plus peak counting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import pdm
from .dsp import fft_convolve
from .errors import CapacityError, ParameterError, StateError

BARKER13 = np.array([1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1], dtype=np.float64)
MARKER_FREQ_HZ = 50e3
CYCLES_PER_CHIP = 8
MARKER_GAP_PDM = 360  # PDM samples between repeated bursts
MARKER_AMPLITUDE = 0.5  # -6 dB relative to full scale
MAX_MARKER_ID = 15
# detection keeps a peak only if it beats 6x the median correlation
# magnitude and a quarter of the amplitude expected from a clean marker
_MEDIAN_FACTOR = 6.0
_ABS_FLOOR_FACTOR = 0.25


@dataclass
class TriggerSchedule:
    mode: str  # "simultaneous" or "sequenced"
    device_ids: list
    offsets_us: list[int]


@dataclass
class MarkerDetection:
    marker_id: int
    offset_samples: int  # start of the marker, decoded-rate samples


def make_schedule(mode: str, device_ids, interval_us: int = 0) -> TriggerSchedule:
    """Trigger offsets per device: all zero, or staggered by interval_us."""
    ids = list(device_ids)
    if not 1 <= len(ids) <= 6:
        raise CapacityError(f"device count {len(ids)} outside 1..6")
    if len(set(ids)) != len(ids):
        raise ParameterError("device_ids must be unique")
    if mode == "simultaneous":
        return TriggerSchedule(mode, ids, [0] * len(ids))
    if mode == "sequenced":
        if interval_us <= 0:
            raise ParameterError("sequenced triggering needs interval_us > 0")
        return TriggerSchedule(mode, ids, [i * int(interval_us)
                                           for i in range(len(ids))])
    raise ParameterError(f"unknown trigger mode {mode!r}")


def _burst(fs: float) -> np.ndarray:
    """One Barker-coded burst sampled at fs, amplitude 1."""
    chip_len = round(CYCLES_PER_CHIP * fs / MARKER_FREQ_HZ)
    t = np.arange(chip_len) / fs
    chip = np.sin(2.0 * np.pi * MARKER_FREQ_HZ * t)
    return np.concatenate([b * chip for b in BARKER13])


def _marker_track(marker_id: int, n_bits: int, fs_pdm: float,
                  offset_bits: int) -> np.ndarray:
    burst = _burst(fs_pdm)
    period = burst.size + MARKER_GAP_PDM
    reps = marker_id + 1
    total = reps * burst.size + (reps - 1) * MARKER_GAP_PDM
    if offset_bits < 0 or offset_bits + total > n_bits:
        raise ParameterError(
            f"marker of {total} PDM samples does not fit the capture "
            f"({n_bits} bits) at offset {offset_bits}")
    track = np.zeros(n_bits)
    for k in range(reps):
        start = offset_bits + k * period
        track[start:start + burst.size] = burst
    return track


def inject_marker(m: pdm.Measurement, marker_id: int,
                  offset_bits: int = 0) -> pdm.Measurement:
    """Mix a marker into channel 0 and re-encode it; other channels untouched.

    The marked channel is reconstructed by low-pass decoding the bitstream at
    the full PDM rate, adding the marker at half full scale, and running the
    modulator again. Double injection is rejected, never layered.
    """
    if not 0 <= marker_id <= MAX_MARKER_ID:
        raise ParameterError(f"marker_id {marker_id} outside 0..{MAX_MARKER_ID}")
    if m.sync_marker is not None:
        raise StateError(f"measurement already carries marker {m.sync_marker}")
    if detect_marker(m) is not None:
        raise StateError("channel 0 already contains a marker")
    stream = m.stream
    if stream.n_bits_per_channel < 2048 * pdm.DECIMATION:
        raise ParameterError("capture too short to hold a marker region")
    track = _marker_track(marker_id, stream.n_bits_per_channel,
                          stream.fs_pdm, offset_bits)
    levels = pdm.unpack_channel(stream, 0).astype(np.float64) * 2.0 - 1.0
    baseband = pdm.lowpass_decimate(levels, stream.fs_pdm, 1)
    mixed = np.clip(baseband + MARKER_AMPLITUDE * track, -1.0, 1.0)
    new_bits = pdm.pdm_encode(mixed, stream.fs_pdm)
    words = stream.words.copy()
    words[0] = np.packbits(new_bits, bitorder="little").view(np.uint32)
    new_stream = pdm.PdmStream(words, stream.n_channels,
                               stream.n_bits_per_channel, stream.fs_pdm)
    return pdm.Measurement(new_stream, m.device_serial, m.timestamp_us,
                           array_ref=m.array_ref,
                           excitation_ref=m.excitation_ref,
                           sync_marker=marker_id)


def detect_marker(m: pdm.Measurement) -> MarkerDetection | None:
    """Correlate decoded channel 0 against the burst template.

    Returns the marker id (repetition count - 1) and the marker start in
    decoded samples, compensated for the decode filter delay; None when no
    peak clears the detection thresholds.
    """
    decimation = pdm.DECIMATION
    x = pdm.pdm_decode(pdm.unpack_channel(m.stream, 0), m.stream.fs_pdm,
                       decimation)
    fs_dec = m.stream.fs_pdm / decimation
    template = _burst(fs_dec)
    tnorm = np.linalg.norm(template)
    corr = np.abs(fft_convolve(x, template[::-1] / tnorm, mode="full"))
    peak_idx = int(np.argmax(corr))
    peak = corr[peak_idx]
    floor = max(_MEDIAN_FACTOR * float(np.median(corr)),
                _ABS_FLOOR_FACTOR * MARKER_AMPLITUDE * tnorm)
    if peak < floor:
        return None

    burst_len = template.size
    period = round((_burst(m.stream.fs_pdm).size + MARKER_GAP_PDM) / decimation)
    accept = 0.5 * peak

    def peak_near(center: int) -> int | None:
        lo = max(0, center - 2)
        hi = min(corr.size, center + 3)
        if lo >= hi:
            return None
        local = int(np.argmax(corr[lo:hi])) + lo
        return local if corr[local] >= accept else None

    first = peak_idx
    reps = 1
    pos = peak_idx
    while True:  # walk backwards to the first repetition
        cand = peak_near(pos - period)
        if cand is None:
            break
        first, pos, reps = cand, cand, reps + 1
    pos = peak_idx
    while True:  # and forwards to the last
        cand = peak_near(pos + period)
        if cand is None:
            break
        pos, reps = cand, reps + 1
    if reps > MAX_MARKER_ID + 1:
        return None
    offset = (first - (burst_len - 1)) - pdm.DECODE_GROUP_DELAY_SAMPLES
    return MarkerDetection(marker_id=reps - 1, offset_samples=offset)

"""Synthetic acoustic scenes: point reflectors in front of the array turned
into per-microphone echo signals and, from there, into PDM measurements.

This is the ground-truth generator the rest of the pipeline is verified
against. Propagation is spherical spreading only (1 / (d_tx * d_rx)), with
exact per-microphone path lengths and fractional delays by linear
interpolation at the simulation rate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import pdm
from .arrays import MicArray, array_doc
from .errors import ParameterError
from .fingerprint import fingerprint64
from .waveform import Waveform


@dataclass
class Reflector:
    position: np.ndarray  # (3,) meters, array coordinates
    reflectivity: float = 1.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        if self.position.shape != (3,):
            raise ParameterError("reflector position must be a 3-vector")
        if self.reflectivity <= 0:
            raise ParameterError("reflectivity must be positive")


@dataclass
class Scene:
    reflectors: list[Reflector] = field(default_factory=list)
    noise_rms: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.reflectors = [r if isinstance(r, Reflector) else Reflector(**r)
                           for r in self.reflectors]
        if self.noise_rms < 0:
            raise ParameterError("noise_rms must be >= 0")
        for r in self.reflectors:
            if np.linalg.norm(r.position) <= 0.1:
                raise ParameterError(
                    "reflectors must sit more than 0.1 m from the array center")


def simulate_channels(scene: Scene, array: MicArray, excitation: Waveform,
                      fs_out: float, capture_duration: float,
                      sound_speed: float) -> np.ndarray:
    """Per-microphone echo signals at fs_out, shape (n_mics, n_samples).

    Each reflector contributes a delayed, attenuated copy of the excitation:
    delay (d_tx + d_rx) / c, amplitude reflectivity / (d_tx * d_rx). White
    Gaussian noise of the scene's RMS is added per channel, each channel
    seeded independently (seed xor channel index) so parallel and serial
    simulation agree bit for bit.
    """
    if fs_out <= 0 or capture_duration <= 0 or sound_speed <= 0:
        raise ParameterError("fs_out, capture_duration, sound_speed must be positive")
    n = round(capture_duration * fs_out)
    src_duration = excitation.samples.size / excitation.fs
    src_index = np.arange(excitation.samples.size)
    out = np.zeros((array.n_mics, n))
    for mi, mic in enumerate(array.mic_positions):
        ch = out[mi]
        for r in scene.reflectors:
            d_tx = float(np.linalg.norm(r.position - array.emitter_position))
            d_rx = float(np.linalg.norm(r.position - mic))
            tau = (d_tx + d_rx) / sound_speed
            if tau + src_duration > capture_duration:
                raise ParameterError(
                    f"echo at {tau + src_duration:.6f} s falls outside the "
                    f"{capture_duration:.6f} s capture window")
            amp = r.reflectivity / (d_tx * d_rx)
            i0 = max(0, int(np.floor(tau * fs_out)) - 1)
            i1 = min(n, int(np.ceil((tau + src_duration) * fs_out)) + 2)
            t_local = (np.arange(i0, i1) / fs_out - tau) * excitation.fs
            ch[i0:i1] += amp * np.interp(t_local, src_index, excitation.samples,
                                         left=0.0, right=0.0)
        if scene.noise_rms > 0:
            rng = np.random.default_rng(scene.seed ^ mi)
            ch += scene.noise_rms * rng.standard_normal(n)
    return out


def simulate_measurement(scene: Scene, array: MicArray, excitation: Waveform,
                         sound_speed: float = 343.0, device_serial: int = 0,
                         timestamp_us: int = 0,
                         n_bits_per_channel: int = pdm.DEFAULT_BITS_PER_CHANNEL,
                         fs_pdm: float = pdm.FS_PDM) -> pdm.Measurement:
    """Simulate at the PDM rate, normalize to half full scale, and encode.

    Deterministic: the same scene and seed give a bit-identical Measurement.
    """
    capture_duration = n_bits_per_channel / fs_pdm
    channels = simulate_channels(scene, array, excitation, fs_pdm,
                                 capture_duration, sound_speed)
    peak = np.max(np.abs(channels))
    if peak > 0:
        channels *= 0.5 / peak
    bits = [pdm.pdm_encode(ch, fs_pdm) for ch in channels]
    stream = pdm.pack_channels(bits, fs_pdm)
    return pdm.Measurement(stream, device_serial, timestamp_us,
                           array_ref=fingerprint64(array_doc(array)),
                           excitation_ref=fingerprint64(excitation.params))


def scene_to_json(scene: Scene) -> str:
    doc = {
        "schema": "airsonar/scene/v1",
        "reflectors": [{"pos": r.position.tolist(),
                        "reflectivity": r.reflectivity}
                       for r in scene.reflectors],
        "noise_rms": scene.noise_rms,
        "seed": scene.seed,
    }
    return json.dumps(doc, indent=2)


def scene_from_json(text: str) -> Scene:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParameterError(f"scene JSON does not parse: {e}") from e
    if "reflectors" not in doc:
        raise ParameterError("scene JSON missing key 'reflectors'")
    refl = []
    for i, r in enumerate(doc["reflectors"]):
        if "pos" not in r:
            raise ParameterError(f"reflector {i} missing key 'pos'")
        refl.append(Reflector(np.asarray(r["pos"], dtype=np.float64),
                              float(r.get("reflectivity", 1.0))))
    return Scene(refl, noise_rms=float(doc.get("noise_rms", 0.0)),
                 seed=int(doc.get("seed", 0)))

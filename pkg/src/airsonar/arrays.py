"""Microphone array geometry, direction grids, steering delays, beampatterns.

Conventions: the array lies in the z=0 plane and looks along +z (boresight).
Azimuth is the angle in the horizontal xz plane, so a 2D direction with
azimuth `a` is the unit vector (sin a, 0, cos a). All coordinates are meters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, GenerationError, ParameterError

MAX_MICS = 32
DEFAULT_EMITTER = (0.0, -0.06, 0.0)
DEFAULT_SOUND_SPEED = 343.0

_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


@dataclass
class MicArray:
    """Microphone positions plus the emitter location, all in array coordinates."""

    mic_positions: np.ndarray  # (n_mics, 3) float64
    emitter_position: np.ndarray  # (3,) float64
    layout_kind: str  # "grid" or "poisson"
    seed: int | None = None

    def __post_init__(self):
        self.mic_positions = np.asarray(self.mic_positions, dtype=np.float64)
        self.emitter_position = np.asarray(self.emitter_position, dtype=np.float64)
        if self.mic_positions.ndim != 2 or self.mic_positions.shape[1] != 3:
            raise ParameterError("mic_positions must be an (n, 3) array")
        n = self.mic_positions.shape[0]
        if not 1 <= n <= MAX_MICS:
            raise CapacityError(f"microphone count {n} outside 1..{MAX_MICS}")
        if self.emitter_position.shape != (3,):
            raise ParameterError("emitter_position must be a 3-vector")
        if self.layout_kind not in ("grid", "poisson"):
            raise ParameterError(f"unknown layout_kind {self.layout_kind!r}")

    @property
    def n_mics(self) -> int:
        return self.mic_positions.shape[0]


@dataclass
class DirectionGrid:
    """A set of unit steering vectors, plus how it was constructed.

    `params` keeps the construction arguments so a grid can be regenerated
    from serialized metadata without shipping every vector.
    """

    directions: np.ndarray  # (n, 3) float64, unit vectors
    kind: str  # "arc2d" or "hemisphere3d"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.directions = np.asarray(self.directions, dtype=np.float64)
        if self.directions.ndim != 2 or self.directions.shape[1] != 3:
            raise ParameterError("directions must be an (n, 3) array")
        if self.directions.shape[0] < 1:
            raise ParameterError("direction grid must hold at least one vector")
        if self.kind not in ("arc2d", "hemisphere3d"):
            raise ParameterError(f"unknown grid kind {self.kind!r}")
        norms = np.linalg.norm(self.directions, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ParameterError("direction vectors must have unit norm")

    @property
    def n_directions(self) -> int:
        return self.directions.shape[0]

    def azimuths(self) -> np.ndarray:
        """Azimuth angle of every direction, radians, xz plane."""
        return np.arctan2(self.directions[:, 0], self.directions[:, 2])


@dataclass
class DelayTable:
    """Integer steering delays (decoded-rate samples), one row per direction."""

    delays: np.ndarray  # (n_directions, n_mics) int64, row minima are 0
    fs_decoded: float
    sound_speed: float

    def __post_init__(self):
        self.delays = np.asarray(self.delays, dtype=np.int64)
        if self.delays.ndim != 2:
            raise ParameterError("delays must be a 2-D matrix")
        if np.any(self.delays < 0):
            raise ParameterError("delays must be non-negative")

    @property
    def max_delay(self) -> int:
        return int(self.delays.max())


def grid_array(rows: int, cols: int, pitch: float,
               emitter=DEFAULT_EMITTER) -> MicArray:
    """Regular rows x cols lattice centered on the origin, constant pitch."""
    if rows < 1 or cols < 1:
        raise ParameterError("rows and cols must be positive")
    if rows * cols > MAX_MICS:
        raise CapacityError(f"{rows}x{cols} lattice exceeds {MAX_MICS} microphones")
    if pitch <= 0:
        raise ParameterError("pitch must be positive")
    xs = (np.arange(cols) - (cols - 1) / 2.0) * pitch
    ys = (np.arange(rows) - (rows - 1) / 2.0) * pitch
    pos = np.array([(x, y, 0.0) for y in ys for x in xs])
    return MicArray(pos, np.asarray(emitter, dtype=np.float64), "grid")


_MAX_REJECTIONS = 10_000  # consecutive failed darts before a restart
_MAX_RESTARTS = 20


def poisson_disc_array(n: int, aperture_radius: float, min_distance: float,
                       seed: int, emitter=DEFAULT_EMITTER) -> MicArray:
    """Random layout inside a disc with a hard minimum spacing (dart throwing).

    Deterministic for a fixed seed. Each point gets a budget of rejected
    darts; the whole layout is restarted a bounded number of times before
    giving up.
    """
    if not 1 <= n <= MAX_MICS:
        raise CapacityError(f"microphone count {n} outside 1..{MAX_MICS}")
    if aperture_radius <= 0 or min_distance <= 0:
        raise ParameterError("aperture_radius and min_distance must be positive")
    # packing headroom: discs of radius d/2 must fit in half the aperture area
    if n * (min_distance / 2.0) ** 2 > 0.5 * aperture_radius**2:
        raise ParameterError(
            f"cannot pack {n} points with spacing {min_distance} "
            f"inside radius {aperture_radius}")

    rng = np.random.default_rng(seed)
    for _ in range(_MAX_RESTARTS):
        points: list[np.ndarray] = []
        rejections = 0
        while len(points) < n and rejections < _MAX_REJECTIONS:
            r = aperture_radius * np.sqrt(rng.random())
            theta = 2.0 * np.pi * rng.random()
            cand = np.array([r * np.cos(theta), r * np.sin(theta), 0.0])
            if all(np.linalg.norm(cand - p) >= min_distance for p in points):
                points.append(cand)
                rejections = 0
            else:
                rejections += 1
        if len(points) == n:
            return MicArray(np.array(points), np.asarray(emitter, dtype=np.float64),
                            "poisson", seed=seed)
    raise GenerationError(
        f"dart throwing failed to place {n} points after "
        f"{_MAX_RESTARTS} restarts")


def direction_grid_2d(n: int, az_min: float, az_max: float) -> DirectionGrid:
    """n directions in the horizontal plane, azimuths equispaced inclusive."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    if az_min > az_max or (az_min == az_max and n > 1):
        raise ParameterError("az_min must be < az_max")
    az = np.linspace(az_min, az_max, n)
    dirs = np.stack([np.sin(az), np.zeros(n), np.cos(az)], axis=1)
    return DirectionGrid(dirs, "arc2d",
                         params={"n": n, "az_min": az_min, "az_max": az_max})


def direction_grid_3d(n: int, max_polar: float) -> DirectionGrid:
    """Spiral (golden-angle) sampling of the forward cap of half-angle max_polar.

    Near-uniform density: the max/min nearest-neighbor angular spacing ratio
    stays well under 2.5 for n >= 100.
    """
    if n < 1:
        raise ParameterError("n must be >= 1")
    if not 0 < max_polar <= np.pi / 2:
        raise ParameterError("max_polar must be in (0, pi/2]")
    if n == 1:
        dirs = np.array([[0.0, 0.0, 1.0]])
    else:
        i = np.arange(n)
        z = 1.0 - (1.0 - np.cos(max_polar)) * (i + 0.5) / n
        rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        phi = i * _GOLDEN_ANGLE
        dirs = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return DirectionGrid(dirs, "hemisphere3d",
                         params={"n": n, "max_polar": max_polar})


def steering_delays(array: MicArray, grid: DirectionGrid, sound_speed: float,
                    fs_decoded: float) -> DelayTable:
    """Far-field integer sample delays, normalized to 0 per direction.

    The raw delay of mic m for direction u is -(r_m . u) / c; per direction
    the minimum is shifted to zero before quantizing to the decoded rate, so
    every row keeps at least one exact zero.
    """
    if sound_speed <= 0:
        raise ParameterError("sound_speed must be positive")
    if fs_decoded <= 0:
        raise ParameterError("fs_decoded must be positive")
    raw = -(grid.directions @ array.mic_positions.T) / sound_speed  # (D, M)
    shifted = raw - raw.min(axis=1, keepdims=True)
    delays = np.rint(shifted * fs_decoded).astype(np.int64)
    return DelayTable(delays, fs_decoded=fs_decoded, sound_speed=sound_speed)


def beampattern(array: MicArray, frequency: float, steer: np.ndarray,
                grid: DirectionGrid, sound_speed: float = DEFAULT_SOUND_SPEED) -> np.ndarray:
    """Narrowband array factor magnitude per grid direction, 1.0 at steer."""
    if frequency <= 0:
        raise ParameterError("frequency must be positive")
    steer = np.asarray(steer, dtype=np.float64)
    diff = grid.directions - steer[None, :]  # (D, 3)
    phase = 2.0 * np.pi * frequency / sound_speed * (diff @ array.mic_positions.T)
    return np.abs(np.exp(1j * phase).sum(axis=1)) / array.n_mics


def aperture_diameter(array: MicArray) -> float:
    """Largest pairwise distance between microphones."""
    pos = array.mic_positions
    diff = pos[:, None, :] - pos[None, :, :]
    return float(np.sqrt((diff**2).sum(axis=2)).max())


def array_doc(array: MicArray) -> dict:
    doc = {
        "layout": array.layout_kind,
        "mics": array.mic_positions.tolist(),
        "emitter": array.emitter_position.tolist(),
    }
    if array.seed is not None:
        doc["seed"] = array.seed
    return doc


def array_to_json(array: MicArray) -> str:
    return json.dumps({"schema": "airsonar/array/v1", **array_doc(array)},
                      indent=2)


def array_from_json(text: str) -> MicArray:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParameterError(f"array JSON does not parse: {e}") from e
    for key in ("layout", "mics", "emitter"):
        if key not in doc:
            raise ParameterError(f"array JSON missing key {key!r}")
    return MicArray(np.asarray(doc["mics"], dtype=np.float64),
                    np.asarray(doc["emitter"], dtype=np.float64),
                    doc["layout"], seed=doc.get("seed"))

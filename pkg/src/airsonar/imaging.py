"""Image products: pointcloud extraction and file exports (PGM, CSV, JSON).

The range axis of an image is sample-indexed; converting a sample index s to
meters uses range = (s - group_delay_offset) * range_per_sample, which folds
the pipeline's constant filter delays out exactly once, here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arrays import DirectionGrid, direction_grid_2d, direction_grid_3d
from .dsp import AcousticImage
from .errors import ParameterError


@dataclass
class PointCloud:
    positions: np.ndarray  # (n, 3) meters
    intensities: np.ndarray  # (n,)
    direction_idx: np.ndarray  # (n,) lattice cell of each point
    range_idx: np.ndarray  # (n,)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.intensities = np.asarray(self.intensities, dtype=np.float64)

    def __len__(self) -> int:
        return self.intensities.size


def extract_pointcloud(img: AcousticImage, threshold_db: float = 20.0,
                       min_separation: int = 50) -> PointCloud:
    """Peak-pick an image into a pointcloud.

    Keeps strict local maxima of the (direction, range) lattice no more than
    threshold_db below the image maximum, then suppresses weaker peaks within
    min_separation range samples on the same or an adjacent direction,
    strongest first (ties: lowest direction then range index). Peaks earlier
    than the group-delay offset have no physical range and are dropped.
    """
    if threshold_db <= 0:
        raise ParameterError("threshold_db must be positive")
    inten = img.intensity
    peak = inten.max()
    if inten.size == 0 or peak <= 0:
        return PointCloud(np.empty((0, 3)), np.empty(0),
                          np.empty(0, np.int64), np.empty(0, np.int64))
    floor = peak / 10.0 ** (threshold_db / 20.0)

    padded = np.pad(inten, 1, constant_values=-np.inf)
    core = padded[1:-1, 1:-1]
    strict_max = ((core > padded[:-2, 1:-1]) & (core > padded[2:, 1:-1]) &
                  (core > padded[1:-1, :-2]) & (core > padded[1:-1, 2:]))
    cand_d, cand_r = np.nonzero(strict_max & (inten >= floor))
    order = sorted(range(cand_d.size),
                   key=lambda i: (-inten[cand_d[i], cand_r[i]],
                                  cand_d[i], cand_r[i]))

    kept: list[tuple[int, int]] = []
    for i in order:
        d, r = int(cand_d[i]), int(cand_r[i])
        if r < img.group_delay_offset:
            continue
        if any(abs(d - kd) <= 1 and abs(r - kr) <= min_separation
               for kd, kr in kept):
            continue
        kept.append((d, r))

    dirs = np.array([d for d, _ in kept], dtype=np.int64)
    rngs = np.array([r for _, r in kept], dtype=np.int64)
    ranges_m = (rngs - img.group_delay_offset) * img.range_per_sample
    positions = ranges_m[:, None] * img.grid.directions[dirs] if kept else \
        np.empty((0, 3))
    intensities = inten[dirs, rngs] if kept else np.empty(0)
    return PointCloud(positions, intensities, dirs, rngs)


def export_pgm(img: AcousticImage) -> bytes:
    """16-bit binary PGM, one row per direction, global max scaled to 65535."""
    inten = img.intensity
    if inten.size == 0:
        raise ParameterError("cannot export an empty image")
    header = f"P5\n{img.n_range_samples} {img.grid.n_directions}\n65535\n"
    peak = inten.max()
    if peak > 0:
        # round half up so 0.5 of full scale lands on 32768
        pix = np.floor(inten * (65535.0 / peak) + 0.5)
    else:
        pix = np.zeros_like(inten)
    pix = np.clip(pix, 0, 65535).astype(">u2")
    return header.encode("ascii") + pix.tobytes()


def export_csv(img: AcousticImage) -> bytes:
    """Comma-separated intensity matrix, directions as rows, 9 significant
    digits, with a '#' comment header."""
    inten = img.intensity
    if inten.size == 0:
        raise ParameterError("cannot export an empty image")
    lines = [
        "# acoustic image: rows are directions, columns are range samples",
        f"# n_directions={img.grid.n_directions} "
        f"n_range_samples={img.n_range_samples} "
        f"fs_decoded_hz={img.fs_decoded:.9g} "
        f"sound_speed_mps={img.sound_speed:.9g} "
        f"range_per_sample_m={img.range_per_sample:.9g} "
        f"group_delay_offset_samples={img.group_delay_offset}",
    ]
    lines.extend(",".join(f"{v:.9g}" for v in row) for row in inten)
    return ("\n".join(lines) + "\n").encode("ascii")


def export_pointcloud_csv(cloud: PointCloud) -> bytes:
    lines = ["x,y,z,intensity"]
    for pos, inten in zip(cloud.positions, cloud.intensities):
        lines.append(f"{pos[0]:.9g},{pos[1]:.9g},{pos[2]:.9g},{inten:.9g}")
    return ("\n".join(lines) + "\n").encode("ascii")


def image_metadata(img: AcousticImage) -> dict:
    """JSON-able description of everything but the intensity matrix."""
    grid_doc: dict = {"kind": img.grid.kind}
    if img.grid.params:
        grid_doc.update(img.grid.params)
    else:
        grid_doc["directions"] = img.grid.directions.tolist()
    return {
        "schema": "airsonar/image/v1",
        "grid": grid_doc,
        "n_directions": img.grid.n_directions,
        "n_range_samples": img.n_range_samples,
        "fs_decoded_hz": img.fs_decoded,
        "sound_speed_mps": img.sound_speed,
        "range_per_sample_m": img.range_per_sample,
        "group_delay_offset_samples": img.group_delay_offset,
    }


def grid_from_doc(doc: dict) -> DirectionGrid:
    kind = doc.get("kind")
    if "directions" in doc:
        return DirectionGrid(np.asarray(doc["directions"], dtype=np.float64),
                             kind)
    if kind == "arc2d":
        return direction_grid_2d(doc["n"], doc["az_min"], doc["az_max"])
    if kind == "hemisphere3d":
        return direction_grid_3d(doc["n"], doc["max_polar"])
    raise ParameterError(f"cannot rebuild grid from doc: {doc!r}")


def image_from_parts(meta: dict, intensity: np.ndarray) -> AcousticImage:
    """Rebuild an AcousticImage from exported metadata plus raw intensity."""
    grid = grid_from_doc(meta["grid"])
    img = AcousticImage(intensity.reshape(meta["n_directions"],
                                          meta["n_range_samples"]),
                        grid, meta["fs_decoded_hz"], meta["sound_speed_mps"],
                        group_delay_offset=meta["group_delay_offset_samples"])
    return img

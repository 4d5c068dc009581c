"""Command-line entry point.

Subcommands map one-to-one onto library operations: `array gen`, `chirp gen`,
`simulate`, `process`, `pointcloud`, `bench`, `serve`, `client`, and
`sync inject|detect`. Every run echoes its fully resolved configuration to
standard error; data goes to files or standard output only.

Exit codes: 0 success, 1 usage error (flags, schema), 2 runtime error
(missing files, processing failures). The ERTIS_LOG environment variable
(error|warn|info|debug) sets logging verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import socket
import sys
import threading
import time
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import imaging, net, plots, scene as scene_mod, sync as sync_mod
from .arrays import (MicArray, array_doc, array_from_json, array_to_json,
                     direction_grid_2d, direction_grid_3d, grid_array,
                     poisson_disc_array)
from .dsp import ProcessingConfig, process_measurement
from .errors import ParameterError
from .fingerprint import fingerprint64
from . import pdm
from .waveform import (Waveform, log_fm_chirp, waveform_from_params,
                       waveform_to_csv)

log = logging.getLogger("airsonar.cli")

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}

DEFAULT_EXCITATION = {"kind": "log_fm_chirp", "f_start": 20e3, "f_end": 80e3,
                      "duration": 0.002, "fs": pdm.FS_DECODED,
                      "taper_fraction": 0.1}

_PROCESSING_KEYS = {"matched_filter", "envelope", "sound_speed", "decimation",
                    "directions", "grid", "az_min_deg", "az_max_deg",
                    "max_polar_deg", "excitation", "schema"}
_SERVER_KEYS = _PROCESSING_KEYS | {"worker_count", "queue_capacity",
                                   "placement"}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _echo_config(doc: dict) -> None:
    print("config: " + json.dumps(doc, sort_keys=True, default=str),
          file=sys.stderr)


def _read_text(path: str) -> str:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return p.read_text()


def _load_config_file(path: str | None, allowed: set[str]) -> dict:
    if path is None:
        return {}
    text = _read_text(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise _UsageError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise _UsageError(f"config {path} must hold a JSON object")
    for key in doc:
        if key not in allowed:
            raise _UsageError(f"config {path} has unknown key {key!r}")
    return doc


def _load_array(path: str) -> MicArray:
    try:
        return array_from_json(_read_text(path))
    except ParameterError as e:
        raise _UsageError(f"array file {path}: {e}") from e


def _load_scene(path: str) -> scene_mod.Scene:
    try:
        return scene_mod.scene_from_json(_read_text(path))
    except ParameterError as e:
        raise _UsageError(f"scene file {path}: {e}") from e


def _make_grid(directions: int, kind: str, az_min_deg: float,
               az_max_deg: float, max_polar_deg: float):
    if kind == "arc2d":
        return direction_grid_2d(directions, np.deg2rad(az_min_deg),
                                 np.deg2rad(az_max_deg))
    if kind == "hemisphere3d":
        return direction_grid_3d(directions, np.deg2rad(max_polar_deg))
    raise _UsageError(f"unknown grid kind {kind!r}")


def _resolve_processing(args, file_doc: dict) -> tuple[ProcessingConfig, dict]:
    """Merge config-file values with flag overrides; flags win."""
    directions = args.directions if args.directions is not None else \
        int(file_doc.get("directions", 90))
    grid_kind = args.grid if getattr(args, "grid", None) else \
        file_doc.get("grid", "arc2d")
    az_min = args.az_min if args.az_min is not None else \
        float(file_doc.get("az_min_deg", -90.0))
    az_max = args.az_max if args.az_max is not None else \
        float(file_doc.get("az_max_deg", 90.0))
    max_polar = args.max_polar if args.max_polar is not None else \
        float(file_doc.get("max_polar_deg", 90.0))
    matched = (not args.no_matched_filter) if args.no_matched_filter else \
        bool(file_doc.get("matched_filter", True))
    envelope = (not args.no_envelope) if args.no_envelope else \
        bool(file_doc.get("envelope", True))
    sound_speed = float(file_doc.get("sound_speed", 343.0))
    decimation = int(file_doc.get("decimation", pdm.DECIMATION))
    grid = _make_grid(directions, grid_kind, az_min, az_max, max_polar)
    try:
        cfg = ProcessingConfig(grid=grid, matched_filter_enabled=matched,
                               envelope_enabled=envelope,
                               sound_speed=sound_speed, decimation=decimation)
    except ParameterError as e:
        raise _UsageError(str(e)) from e
    doc = {"directions": directions, "grid": grid_kind, "az_min_deg": az_min,
           "az_max_deg": az_max, "max_polar_deg": max_polar,
           "matched_filter": matched, "envelope": envelope,
           "sound_speed": sound_speed, "decimation": decimation}
    return cfg, doc


def _resolve_excitation(file_doc: dict) -> Waveform:
    params = dict(DEFAULT_EXCITATION)
    params.update(file_doc.get("excitation", {}))
    try:
        return waveform_from_params(params)
    except (ParameterError, KeyError) as e:
        raise _UsageError(f"bad excitation parameters: {e}") from e


def _measurement_sidecar(array: MicArray, excitation: Waveform,
                         sound_speed: float, sync_marker=None) -> dict:
    return {"schema": "airsonar/measurement/v1",
            "array": array_doc(array),
            "array_fingerprint": fingerprint64(array_doc(array)),
            "excitation": excitation.params,
            "excitation_fingerprint": fingerprint64(excitation.params),
            "sound_speed": sound_speed,
            "sync_marker": sync_marker}


def _sidecar_array(path, override: str | None) -> tuple[MicArray, Waveform, float]:
    """Array, excitation, and sound speed for a measurement file."""
    if override is not None:
        array = _load_array(override)
    else:
        array = None
    side = pdm.load_sidecar(path)
    if side is None:
        if array is None:
            raise _UsageError(
                f"measurement {path} has no JSON sidecar; pass --array")
        excitation = waveform_from_params(dict(DEFAULT_EXCITATION))
        return array, excitation, 343.0
    if array is None:
        array = MicArray(np.asarray(side["array"]["mics"], dtype=np.float64),
                         np.asarray(side["array"]["emitter"], dtype=np.float64),
                         side["array"]["layout"],
                         seed=side["array"].get("seed"))
    excitation = waveform_from_params(side["excitation"])
    return array, excitation, float(side.get("sound_speed", 343.0))


# -- subcommand implementations ---------------------------------------------

def _cmd_array_gen(args) -> int:
    if args.layout == "grid":
        array = grid_array(args.rows, args.cols, args.pitch)
    else:
        array = poisson_disc_array(args.n, args.radius, args.min_distance,
                                   args.seed)
    out = Path(args.out)
    _echo_config({"command": "array gen", "layout": args.layout,
                  "rows": args.rows, "cols": args.cols, "pitch": args.pitch,
                  "n": args.n, "radius": args.radius,
                  "min_distance": args.min_distance, "seed": args.seed,
                  "out": str(out)})
    out.write_text(array_to_json(array))
    plots.save_array_figure(array, out.with_suffix(".png"))
    log.info("wrote %s and %s", out, out.with_suffix(".png"))
    return 0


def _cmd_chirp_gen(args) -> int:
    w = log_fm_chirp(args.f_start, args.f_end, args.duration, args.fs,
                     args.taper)
    out = Path(args.out)
    _echo_config({"command": "chirp gen", **w.params, "out": str(out)})
    out.write_text(waveform_to_csv(w))
    plots.save_waveform_figure(w, out.with_suffix(".png"))
    return 0


def _cmd_simulate(args) -> int:
    sc = _load_scene(args.scene)
    array = _load_array(args.array)
    file_doc = _load_config_file(args.config, _PROCESSING_KEYS)
    excitation = _resolve_excitation(file_doc)
    sound_speed = float(file_doc.get("sound_speed", 343.0))
    if args.seed is not None:
        sc.seed = args.seed
    _echo_config({"command": "simulate", "scene": args.scene,
                  "array": args.array, "seed": sc.seed,
                  "serial": args.serial, "sound_speed": sound_speed,
                  "excitation": excitation.params, "out": args.out})
    m = scene_mod.simulate_measurement(sc, array, excitation, sound_speed,
                                       device_serial=args.serial)
    pdm.write_measurement(args.out, m,
                          sidecar=_measurement_sidecar(array, excitation,
                                                       sound_speed))
    log.info("wrote %s (%d channels x %d bits)", args.out,
             m.stream.n_channels, m.stream.n_bits_per_channel)
    return 0


def _cmd_process(args) -> int:
    file_doc = _load_config_file(args.config, _PROCESSING_KEYS)
    m = pdm.read_measurement(args.measurement)
    array, excitation, sound_speed = _sidecar_array(args.measurement,
                                                    args.array)
    if "sound_speed" not in file_doc:
        file_doc["sound_speed"] = sound_speed
    cfg, cfg_doc = _resolve_processing(args, file_doc)
    _echo_config({"command": "process", "measurement": args.measurement,
                  **cfg_doc, "out": args.out})
    img = process_measurement(m, cfg, array, excitation)
    base = Path(args.out)
    base.with_suffix(".csv").write_bytes(imaging.export_csv(img))
    base.with_suffix(".pgm").write_bytes(imaging.export_pgm(img))
    base.with_suffix(".json").write_text(
        json.dumps(imaging.image_metadata(img), indent=2))
    plots.save_image_figure(img, base.with_suffix(".png"))
    return 0


def _cmd_pointcloud(args) -> int:
    file_doc = _load_config_file(args.config, _PROCESSING_KEYS)
    m = pdm.read_measurement(args.measurement)
    array, excitation, sound_speed = _sidecar_array(args.measurement,
                                                    args.array)
    if "sound_speed" not in file_doc:
        file_doc["sound_speed"] = sound_speed
    if args.grid is None and "grid" not in file_doc:
        file_doc["grid"] = "hemisphere3d"
    if args.directions is None and "directions" not in file_doc:
        file_doc["directions"] = 1000
    cfg, cfg_doc = _resolve_processing(args, file_doc)
    _echo_config({"command": "pointcloud", "measurement": args.measurement,
                  **cfg_doc, "threshold_db": args.threshold_db,
                  "min_separation": args.min_separation, "out": args.out})
    img = process_measurement(m, cfg, array, excitation)
    cloud = imaging.extract_pointcloud(img, args.threshold_db,
                                       args.min_separation)
    out = Path(args.out)
    out.write_bytes(imaging.export_pointcloud_csv(cloud))
    plots.save_pointcloud_figure(cloud, out.with_suffix(".png"))
    log.info("extracted %d points", len(cloud))
    return 0


def _default_bench_measurement() -> tuple[pdm.Measurement, MicArray, Waveform]:
    array = poisson_disc_array(32, 0.04, 0.008, seed=1)
    excitation = waveform_from_params(dict(DEFAULT_EXCITATION))
    sc = scene_mod.Scene([scene_mod.Reflector(np.array([0.0, 0.0, 2.0]))],
                         noise_rms=0.0, seed=1)
    return scene_mod.simulate_measurement(sc, array, excitation), array, \
        excitation


def _cmd_bench(args) -> int:
    try:
        counts = [int(c) for c in args.counts.split(",") if c]
    except ValueError as e:
        raise _UsageError(f"bad --counts value {args.counts!r}") from e
    if args.measurement is not None:
        m = pdm.read_measurement(args.measurement)
        array, excitation, _ = _sidecar_array(args.measurement, args.array)
    else:
        m, array, excitation = _default_bench_measurement()
    _echo_config({"command": "bench", "counts": counts, "runs": args.runs,
                  "measurement": args.measurement or "(synthetic)",
                  "out": args.out})
    report = bench_mod.bench_pipeline(counts, args.runs, m, array, excitation)
    print(report.to_table())
    print(f"linear fit R² = {bench_mod.linear_fit_r2(report.direction_counts, report.mean_ms):.4f}")
    if args.out:
        out = Path(args.out)
        out.write_text(report.to_json())
        plots.save_bench_figure(report, out.with_suffix(".png"))
    return 0


def _cmd_serve(args) -> int:
    file_doc = _load_config_file(args.config, _SERVER_KEYS)
    array = _load_array(args.array)
    cfg, cfg_doc = _resolve_processing(args, file_doc)
    excitation = _resolve_excitation(file_doc)
    placement = args.placement or file_doc.get("placement", "server")
    server_cfg = net.ServerConfig(
        processing=cfg, array=array, excitation=excitation,
        listen_port=args.port,
        worker_count=int(file_doc.get("worker_count", 4)),
        queue_capacity=int(file_doc.get("queue_capacity", 64)),
        processing_placement=placement,
        sink=args.out)
    server = net.run_server(server_cfg)
    _echo_config({"command": "serve", "port": server.port,
                  "placement": placement,
                  "worker_count": server_cfg.worker_count,
                  "queue_capacity": server_cfg.queue_capacity, **cfg_doc,
                  "sink": args.out})
    print(f"listening on port {server.port}", file=sys.stderr, flush=True)
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    stop.wait()
    server.stop()
    print(server.stats.to_json())
    return 0


def _cmd_client(args) -> int:
    sc = _load_scene(args.scene)
    array = _load_array(args.array)
    file_doc = _load_config_file(args.config, _PROCESSING_KEYS)
    cfg, cfg_doc = _resolve_processing(args, file_doc)
    excitation = _resolve_excitation(file_doc)
    base_seed = args.seed if args.seed is not None else sc.seed
    _echo_config({"command": "client", "host": args.host, "port": args.port,
                  "serial": args.serial, "placement": args.placement,
                  "count": args.count, "seed": base_seed, **cfg_doc})

    def source():
        for i in range(args.count):
            shot = scene_mod.Scene(sc.reflectors, sc.noise_rms,
                                   seed=base_seed + i)
            yield scene_mod.simulate_measurement(
                shot, array, excitation, cfg.sound_speed,
                device_serial=args.serial,
                timestamp_us=int(time.time_ns() // 1000))

    client = net.run_client(args.host, args.port, args.serial, source(),
                            args.placement, cfg, array, excitation)
    log.info("sent %d packages", client.sent)
    return 0


def _cmd_sync_inject(args) -> int:
    m = pdm.read_measurement(args.measurement)
    _echo_config({"command": "sync inject", "measurement": args.measurement,
                  "marker_id": args.marker_id, "out": args.out})
    marked = sync_mod.inject_marker(m, args.marker_id)
    sidecar = pdm.load_sidecar(args.measurement)
    if sidecar is not None:
        sidecar["sync_marker"] = args.marker_id
    pdm.write_measurement(args.out, marked, sidecar=sidecar)
    return 0


def _cmd_sync_detect(args) -> int:
    m = pdm.read_measurement(args.measurement)
    _echo_config({"command": "sync detect", "measurement": args.measurement})
    det = sync_mod.detect_marker(m)
    if det is None:
        print(json.dumps({"marker_id": None}))
    else:
        print(json.dumps({"marker_id": det.marker_id,
                          "offset_samples": det.offset_samples}))
    return 0


# -- parser wiring -----------------------------------------------------------

def _add_processing_flags(p: _Parser, with_directions_default=None):
    p.add_argument("--directions", type=int, default=with_directions_default)
    p.add_argument("--grid", choices=["arc2d", "hemisphere3d"], default=None)
    p.add_argument("--az-min", type=float, default=None,
                   help="arc start azimuth, degrees")
    p.add_argument("--az-max", type=float, default=None,
                   help="arc end azimuth, degrees")
    p.add_argument("--max-polar", type=float, default=None,
                   help="hemisphere cap half-angle, degrees")
    p.add_argument("--no-matched-filter", action="store_true")
    p.add_argument("--no-envelope", action="store_true")
    p.add_argument("--config", default=None, help="processing config JSON")


def build_parser() -> _Parser:
    parser = _Parser(prog="airsonar",
                     description="broadband in-air sonar pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    array_p = sub.add_parser("array", help="array geometry tools")
    array_sub = array_p.add_subparsers(dest="subcommand", required=True)
    gen = array_sub.add_parser("gen", help="generate an array definition")
    gen.add_argument("--layout", choices=["grid", "poisson"], default="grid")
    gen.add_argument("--rows", type=int, default=6)
    gen.add_argument("--cols", type=int, default=5)
    gen.add_argument("--pitch", type=float, default=0.009)
    gen.add_argument("--n", type=int, default=32)
    gen.add_argument("--radius", type=float, default=0.04)
    gen.add_argument("--min-distance", type=float, default=0.008)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_array_gen)

    chirp_p = sub.add_parser("chirp", help="excitation waveform tools")
    chirp_sub = chirp_p.add_subparsers(dest="subcommand", required=True)
    cgen = chirp_sub.add_parser("gen", help="generate a chirp CSV")
    cgen.add_argument("--f-start", type=float, default=20e3)
    cgen.add_argument("--f-end", type=float, default=80e3)
    cgen.add_argument("--duration", type=float, default=0.002)
    cgen.add_argument("--fs", type=float, default=pdm.FS_DECODED)
    cgen.add_argument("--taper", type=float, default=0.1)
    cgen.add_argument("--out", required=True)
    cgen.set_defaults(func=_cmd_chirp_gen)

    sim = sub.add_parser("simulate", help="synthesize a measurement file")
    sim.add_argument("--scene", required=True)
    sim.add_argument("--array", required=True)
    sim.add_argument("--config", default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--serial", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=_cmd_simulate)

    proc = sub.add_parser("process", help="measurement file to acoustic image")
    proc.add_argument("measurement")
    proc.add_argument("--array", default=None,
                      help="override the sidecar geometry")
    _add_processing_flags(proc)
    proc.add_argument("--out", required=True,
                      help="output basename for .csv/.pgm/.json/.png")
    proc.set_defaults(func=_cmd_process)

    pc = sub.add_parser("pointcloud", help="measurement file to pointcloud")
    pc.add_argument("measurement")
    pc.add_argument("--array", default=None)
    _add_processing_flags(pc)
    pc.add_argument("--threshold-db", type=float, default=20.0)
    pc.add_argument("--min-separation", type=int, default=50)
    pc.add_argument("--out", required=True)
    pc.set_defaults(func=_cmd_pointcloud)

    bn = sub.add_parser("bench", help="pipeline scaling benchmark")
    bn.add_argument("--counts", default="90,1000,3000,4000")
    bn.add_argument("--runs", type=int, default=50)
    bn.add_argument("--measurement", default=None)
    bn.add_argument("--array", default=None)
    bn.add_argument("--out", default=None)
    bn.set_defaults(func=_cmd_bench)

    srv = sub.add_parser("serve", help="run the measurement server")
    srv.add_argument("--port", type=int, default=0)
    srv.add_argument("--array", required=True)
    srv.add_argument("--placement", choices=["client", "server"], default=None)
    _add_processing_flags(srv)
    srv.add_argument("--out", required=True, help="sink directory for images")
    srv.set_defaults(func=_cmd_serve)

    cli = sub.add_parser("client", help="stream simulated measurements")
    cli.add_argument("--host", default="127.0.0.1")
    cli.add_argument("--port", type=int, required=True)
    cli.add_argument("--serial", type=int, default=1)
    cli.add_argument("--placement", choices=["client", "server"],
                     default="server")
    cli.add_argument("--scene", required=True)
    cli.add_argument("--array", required=True)
    cli.add_argument("--count", type=int, default=1)
    cli.add_argument("--seed", type=int, default=None)
    _add_processing_flags(cli)
    cli.set_defaults(func=_cmd_client)

    sy = sub.add_parser("sync", help="in-band marker tools")
    sy_sub = sy.add_subparsers(dest="subcommand", required=True)
    inj = sy_sub.add_parser("inject", help="mix a marker into channel 0")
    inj.add_argument("measurement")
    inj.add_argument("--marker-id", type=int, required=True)
    inj.add_argument("--out", required=True)
    inj.set_defaults(func=_cmd_sync_inject)
    det = sy_sub.add_parser("detect", help="find a marker in channel 0")
    det.add_argument("measurement")
    det.set_defaults(func=_cmd_sync_detect)

    return parser


def _setup_logging():
    raw = os.environ.get("ERTIS_LOG", "warn").lower()
    level = _LOG_LEVELS.get(raw)
    if level is None:
        level = logging.WARNING
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s",
                        force=True)
    if raw not in _LOG_LEVELS:
        log.warning("unknown ERTIS_LOG value %r, using warn", raw)


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    try:
        return args.func(args) or 0
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 2
    except Exception as e:
        log.debug("unhandled failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

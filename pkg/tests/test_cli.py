import json
import os
import re
import signal
import socket
import subprocess
import sys
import time

import numpy as np
import pytest

import airsonar as a
from airsonar.cli import main


def _write_fixtures(tmp_path, n_bits=32_000):
    scene = {"schema": "airsonar/scene/v1",
             "reflectors": [{"pos": [0.2, 0.0, 0.85], "reflectivity": 1.0}],
             "noise_rms": 0.001, "seed": 3}
    scene_path = tmp_path / "scene.json"
    scene_path.write_text(json.dumps(scene))
    array_path = tmp_path / "array.json"
    assert main(["array", "gen", "--layout", "grid", "--rows", "4", "--cols",
                 "4", "--out", str(array_path)]) == 0
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"excitation": {
        "kind": "log_fm_chirp", "f_start": 20e3, "f_end": 80e3,
        "duration": 0.001, "fs": 450e3, "taper_fraction": 0.1}}))
    return scene_path, array_path, cfg_path


def _simulate(tmp_path):
    scene_path, array_path, cfg_path = _write_fixtures(tmp_path)
    m_path = tmp_path / "m.ertm"
    code = main(["simulate", "--scene", str(scene_path), "--array",
                 str(array_path), "--config", str(cfg_path), "--out",
                 str(m_path)])
    assert code == 0
    return m_path, scene_path, array_path, cfg_path


def test_array_gen_grid_and_poisson(tmp_path):
    out = tmp_path / "grid.json"
    assert main(["array", "gen", "--out", str(out)]) == 0
    assert out.exists() and out.with_suffix(".png").exists()
    doc = json.loads(out.read_text())
    assert doc["schema"] == "airsonar/array/v1"
    assert len(doc["mics"]) == 30

    pout = tmp_path / "poisson.json"
    assert main(["array", "gen", "--layout", "poisson", "--n", "12",
                 "--seed", "2", "--out", str(pout)]) == 0
    assert len(json.loads(pout.read_text())["mics"]) == 12


def test_chirp_gen(tmp_path):
    out = tmp_path / "chirp.csv"
    assert main(["chirp", "gen", "--duration", "0.001", "--out",
                 str(out)]) == 0
    assert out.exists() and out.with_suffix(".png").exists()
    data = [float(ln) for ln in out.read_text().splitlines()
            if ln and not ln.startswith("#")]
    assert len(data) == 450


def test_simulate_writes_measurement_and_sidecar(tmp_path):
    m_path, *_ = _simulate(tmp_path)
    assert m_path.exists()
    blob = m_path.read_bytes()
    assert blob[:4] == b"ERTM"
    side = json.loads(m_path.with_suffix(".json").read_text())
    assert side["schema"] == "airsonar/measurement/v1"
    assert "array_fingerprint" in side and "excitation" in side


def test_process_outputs_and_idempotence(tmp_path, capsys):
    m_path, *_ = _simulate(tmp_path)
    out = tmp_path / "img"
    args = ["process", str(m_path), "--directions", "31", "--out", str(out)]
    assert main(args) == 0
    for suffix in (".csv", ".pgm", ".json", ".png"):
        assert out.with_suffix(suffix).exists(), suffix
    csv1 = out.with_suffix(".csv").read_bytes()
    pgm1 = out.with_suffix(".pgm").read_bytes()
    assert main(args) == 0
    assert out.with_suffix(".csv").read_bytes() == csv1
    assert out.with_suffix(".pgm").read_bytes() == pgm1
    err = capsys.readouterr().err
    assert "config:" in err  # effective settings echoed


def test_pointcloud_finds_the_reflector(tmp_path):
    m_path, *_ = _simulate(tmp_path)
    out = tmp_path / "cloud.csv"
    assert main(["pointcloud", str(m_path), "--directions", "200",
                 "--threshold-db", "15", "--out", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "x,y,z,intensity"
    assert len(lines) >= 2
    x, y, z, _ = (float(v) for v in lines[1].split(","))
    true = np.array([0.2, 0.0, 0.85])
    assert np.linalg.norm(np.array([x, y, z]) - true) < 0.12
    assert out.with_suffix(".png").exists()


def test_sync_inject_detect_cycle(tmp_path, capsys):
    scene_path, array_path, cfg_path = _write_fixtures(tmp_path)
    m_path = tmp_path / "m.ertm"
    # default excitation, full-length capture so any marker id fits
    assert main(["simulate", "--scene", str(scene_path), "--array",
                 str(array_path), "--out", str(m_path)]) == 0
    marked = tmp_path / "marked.ertm"
    assert main(["sync", "inject", str(m_path), "--marker-id", "6", "--out",
                 str(marked)]) == 0
    capsys.readouterr()
    assert main(["sync", "detect", str(marked)]) == 0
    doc = json.loads(capsys.readouterr().out.strip())
    assert doc == {"marker_id": 6, "offset_samples": 0}
    side = json.loads(marked.with_suffix(".json").read_text())
    assert side["sync_marker"] == 6
    capsys.readouterr()
    assert main(["sync", "detect", str(m_path)]) == 0
    assert json.loads(capsys.readouterr().out.strip()) == {"marker_id": None}


def test_bench_tiny(tmp_path, capsys):
    m_path, _, array_path, _ = _simulate(tmp_path)
    out = tmp_path / "bench.json"
    assert main(["bench", "--counts", "8,12", "--runs", "2", "--measurement",
                 str(m_path), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["direction_counts"] == [8, 12]
    assert out.with_suffix(".png").exists()
    stdout = capsys.readouterr().out
    assert "directions" in stdout and "R²" in stdout


def test_serve_and_client_over_tcp(tmp_path):
    scene_path, array_path, cfg_path = _write_fixtures(tmp_path)
    sink = tmp_path / "sink"
    env = dict(os.environ, ERTIS_LOG="info",
               PYTHONPATH=str((tmp_path / "..").resolve()))
    proc = subprocess.Popen(
        [sys.executable, "-m", "airsonar.cli", "serve", "--port", "0",
         "--array", str(array_path), "--config", str(cfg_path),
         "--directions", "16", "--out", str(sink)],
        stderr=subprocess.PIPE, stdout=subprocess.PIPE, text=True)
    try:
        port = None
        deadline = time.monotonic() + 30
        while time.monotonic() < deadline:
            line = proc.stderr.readline()
            m = re.search(r"listening on port (\d+)", line or "")
            if m:
                port = int(m.group(1))
                break
        assert port, "server never reported its port"
        code = main(["client", "--port", str(port), "--scene",
                     str(scene_path), "--array", str(array_path),
                     "--config", str(cfg_path), "--serial", "21",
                     "--count", "2", "--directions", "16"])
        assert code == 0
        deadline = time.monotonic() + 30
        while time.monotonic() < deadline:
            if (sink / "21_1.pgm").exists():
                break
            time.sleep(0.1)
        assert (sink / "21_0.csv").exists()
        assert (sink / "21_1.pgm").exists()
    finally:
        proc.send_signal(signal.SIGINT)
        out, _ = proc.communicate(timeout=30)
    assert proc.returncode == 0
    stats = json.loads(out.strip().splitlines()[-1])
    assert stats["processed"] == 2


def test_exit_codes(tmp_path, capsys):
    assert main(["process", "missing.ertm", "--out", "x"]) == 2
    assert "missing.ertm" in capsys.readouterr().err
    assert main(["process", "--bogus-flag"]) == 1
    assert main(["bench", "--counts", "3,nope"]) == 1
    assert main(["nonsense"]) == 1
    # schema violation in a config file: usage error naming the key
    bad_cfg = tmp_path / "bad.json"
    bad_cfg.write_text(json.dumps({"bogus_key": 1}))
    scene_path, array_path, _ = _write_fixtures(tmp_path)
    code = main(["process", "m.ertm", "--config", str(bad_cfg), "--out", "x"])
    assert code == 1
    assert "bogus_key" in capsys.readouterr().err
    # malformed scene JSON is a usage error too
    bad_scene = tmp_path / "bad_scene.json"
    bad_scene.write_text("{not json")
    assert main(["simulate", "--scene", str(bad_scene), "--array",
                 str(array_path), "--out", str(tmp_path / "z.ertm")]) == 1


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "airsonar" in capsys.readouterr().out


def test_log_level_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("ERTIS_LOG", "debug")
    out = tmp_path / "g.json"
    assert main(["array", "gen", "--out", str(out)]) == 0
    monkeypatch.setenv("ERTIS_LOG", "not-a-level")
    assert main(["array", "gen", "--out", str(out)]) == 0  # warns, proceeds

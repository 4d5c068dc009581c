import json
import socket
import threading
import time

import numpy as np
import pytest

import airsonar as a
from airsonar import net
from airsonar.errors import (ClientError, CrcError, FramingError, LengthError,
                             MagicError, ParameterError, VersionError)
from conftest import small_array, small_chirp, small_scene_measurement


def _random_package(rng):
    payload = rng.bytes(int(rng.integers(0, 2000)))
    return net.MeasurementPackage(
        device_serial=int(rng.integers(0, 2**32)),
        sequence=int(rng.integers(0, 2**32)),
        timestamp_us=int(rng.integers(0, 2**63)),
        payload_kind=int(rng.integers(0, 2)),
        config_fingerprint=int(rng.integers(0, 2**63)),
        payload=payload)


def _wait_for(predicate, timeout=30.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(0.02)
    return False


class RecordingSink:
    def __init__(self):
        self.lock = threading.Lock()
        self.items = []

    def __call__(self, serial, sequence, img):
        with self.lock:
            self.items.append((serial, sequence, img))


def _server_setup(n_mics=16, placement="server", **kw):
    array = small_array()
    exc = small_chirp()
    grid = a.direction_grid_2d(9, -np.pi / 3, np.pi / 3)
    cfg = a.ProcessingConfig(grid=grid)
    sink = RecordingSink()
    scfg = net.ServerConfig(processing=cfg, array=array, excitation=exc,
                            listen_port=0, processing_placement=placement,
                            sink=sink, **kw)
    return scfg, sink, cfg, array, exc


def test_wire_round_trip_field_identical():
    rng = np.random.default_rng(0)
    for _ in range(50):
        p = _random_package(rng)
        q = net.decode_package(net.encode_package(p))
        assert q == p


def test_minimal_package_is_forty_bytes():
    p = net.MeasurementPackage(0, 0, 0, net.KIND_RAW_PDM, 0, b"")
    assert len(net.encode_package(p)) == net.MIN_PACKAGE_BYTES == 40


def test_corruption_raises_framing_errors():
    p = net.MeasurementPackage(1, 2, 3, net.KIND_RAW_PDM, 4, b"payload")
    blob = bytearray(net.encode_package(p))
    with pytest.raises(MagicError):
        net.decode_package(b"XTIP" + bytes(blob[4:]))
    with pytest.raises(VersionError):
        net.decode_package(bytes(blob[:4]) + b"\x09" + bytes(blob[5:]))
    bad_payload = bytearray(blob)
    bad_payload[-6] ^= 0xFF
    with pytest.raises(CrcError):
        net.decode_package(bytes(bad_payload))
    bad_crc = bytearray(blob)
    bad_crc[-1] ^= 0x01
    with pytest.raises(CrcError):
        net.decode_package(bytes(bad_crc))
    with pytest.raises(LengthError):
        net.decode_package(bytes(blob[:-1]))
    with pytest.raises(LengthError):
        net.decode_package(bytes(blob) + b"\x00")
    with pytest.raises(LengthError):
        net.decode_package(b"RTIP")
    # every corruption error is a FramingError
    for exc_type in (MagicError, VersionError, CrcError, LengthError):
        assert issubclass(exc_type, FramingError)


def test_image_payload_round_trip_is_lossless():
    rng = np.random.default_rng(1)
    grid = a.direction_grid_2d(7, -0.8, 0.8)
    img = a.AcousticImage(rng.random((7, 40)), grid, 450e3, 343.0,
                          group_delay_offset=12)
    back = net.decode_image_payload(net.encode_image_payload(img))
    assert np.array_equal(back.intensity, img.intensity)  # exact float64
    assert np.allclose(back.grid.directions, grid.directions, atol=1e-15)
    assert back.group_delay_offset == 12


def test_config_fingerprint_sensitivity():
    array = small_array()
    exc = small_chirp()
    grid = a.direction_grid_2d(9, -1.0, 1.0)
    cfg = a.ProcessingConfig(grid=grid)
    fp = net.config_fingerprint(cfg, array, exc)
    assert fp == net.config_fingerprint(cfg, array, exc)
    other_exc = a.log_fm_chirp(20e3, 80e3, 0.0012, a.FS_DECODED, 0.1)
    assert fp != net.config_fingerprint(cfg, array, other_exc)
    other_grid = a.ProcessingConfig(grid=a.direction_grid_2d(10, -1.0, 1.0))
    assert fp != net.config_fingerprint(other_grid, array, exc)
    other_array = a.grid_array(4, 4, 0.008)
    assert fp != net.config_fingerprint(cfg, other_array, exc)


def test_server_config_validation():
    scfg, *_ = _server_setup()
    with pytest.raises(ParameterError):
        net.ServerConfig(processing=scfg.processing, array=scfg.array,
                         excitation=scfg.excitation, worker_count=0)
    with pytest.raises(ParameterError):
        net.ServerConfig(processing=scfg.processing, array=scfg.array,
                         excitation=scfg.excitation, queue_capacity=0)
    with pytest.raises(ParameterError):
        net.ServerConfig(processing=scfg.processing, array=scfg.array,
                         excitation=scfg.excitation,
                         processing_placement="edge")
    with pytest.raises(ParameterError):
        a.Client("h", 1, 0, [], "edge", scfg.processing, scfg.array,
                 scfg.excitation)


def test_exactly_once_fifo_two_clients():
    scfg, sink, cfg, array, exc = _server_setup(worker_count=4,
                                                queue_capacity=8)
    server = net.run_server(scfg)
    try:
        per_client = 10
        measurements = {}
        for serial in (1, 2):
            m, _, _ = small_scene_measurement(seed=serial, serial=serial,
                                              n_bits=24_000,
                                              reflector=(0.1, 0.0, 0.6))
            measurements[serial] = m
        threads = [threading.Thread(
            target=net.run_client,
            args=("127.0.0.1", server.port, serial,
                  [measurements[serial]] * per_client, "server", cfg, array,
                  exc))
            for serial in (1, 2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert _wait_for(lambda: len(sink.items) >= 2 * per_client)
    finally:
        server.stop()
    seen = [(s, q) for s, q, _ in sink.items]
    assert len(seen) == len(set(seen)) == 2 * per_client
    for serial in (1, 2):
        seqs = [q for s, q in seen if s == serial]
        assert seqs == list(range(per_client))  # FIFO per device
    snap = server.stats.snapshot()
    assert snap["processed"] == 2 * per_client
    assert snap["rejected"] == 0


def test_placement_equivalence_over_the_wire():
    scfg, sink, cfg, array, exc = _server_setup(placement="client")
    server = net.run_server(scfg)
    try:
        m, _, _ = small_scene_measurement(seed=3, serial=9, n_bits=24_000,
                                          reflector=(0.1, 0.0, 0.6))
        net.run_client("127.0.0.1", server.port, 9, [m], "client", cfg,
                       array, exc)
        assert _wait_for(lambda: len(sink.items) == 1)
    finally:
        server.stop()
    local = a.process_measurement(m, cfg, array, exc)
    _, _, remote = sink.items[0]
    assert np.max(np.abs(remote.intensity - local.intensity)) <= 1e-9


def test_fingerprint_mismatch_rejected():
    scfg, sink, cfg, array, exc = _server_setup()
    server = net.run_server(scfg)
    try:
        other = a.log_fm_chirp(20e3, 80e3, 0.0015, a.FS_DECODED, 0.1)
        m, _, _ = small_scene_measurement(seed=4, n_bits=24_000,
                                          reflector=(0.1, 0.0, 0.6))
        net.run_client("127.0.0.1", server.port, 3, [m, m], "server", cfg,
                       array, other)
        assert _wait_for(lambda: server.stats.snapshot()["rejected"] >= 2)
    finally:
        server.stop()
    assert sink.items == []


def test_raw_capture_rejected_under_client_placement():
    scfg, sink, cfg, array, exc = _server_setup(placement="client")
    server = net.run_server(scfg)
    try:
        m, _, _ = small_scene_measurement(seed=5, n_bits=24_000,
                                          reflector=(0.1, 0.0, 0.6))
        # a client wired for server-side processing ships raw PDM
        net.run_client("127.0.0.1", server.port, 4, [m], "server", cfg,
                       array, exc)
        assert _wait_for(lambda: server.stats.snapshot()["rejected"] >= 1)
    finally:
        server.stop()
    assert sink.items == []


def test_reader_drops_connection_after_three_bad_packages():
    scfg, sink, *_ = _server_setup()
    server = net.run_server(scfg)
    try:
        good = net.encode_package(
            net.MeasurementPackage(1, 0, 0, net.KIND_RAW_PDM, 0, b"x" * 50))
        bad = bytearray(good)
        bad[-1] ^= 0xFF  # break the checksum, keep the framing
        sock = socket.create_connection(("127.0.0.1", server.port), timeout=10)
        sock.sendall(bytes(bad) * 3)
        deadline = time.monotonic() + 20
        dropped = False
        while time.monotonic() < deadline:
            try:
                sock.sendall(bytes(bad))
            except OSError:
                dropped = True
                break
            time.sleep(0.1)
        assert dropped, "server kept the connection after 3 decode failures"
        assert server.stats.snapshot()["decode_errors"] >= 3
        sock.close()
    finally:
        server.stop()


def test_reader_drops_connection_on_header_garbage():
    scfg, *_ = _server_setup()
    server = net.run_server(scfg)
    try:
        sock = socket.create_connection(("127.0.0.1", server.port), timeout=10)
        sock.sendall(b"\xde\xad\xbe\xef" * 9)  # 36 bytes, no valid magic
        deadline = time.monotonic() + 20
        dropped = False
        while time.monotonic() < deadline:
            try:
                sock.sendall(b"\x00" * 36)
            except OSError:
                dropped = True
                break
            time.sleep(0.1)
        assert dropped
        assert server.stats.snapshot()["decode_errors"] >= 1
        sock.close()
    finally:
        server.stop()


def test_backpressure_with_tiny_queue():
    scfg, sink, cfg, array, exc = _server_setup(worker_count=1,
                                                queue_capacity=1)
    slow_lock = threading.Lock()

    real_call = RecordingSink.__call__

    class SlowSink(RecordingSink):
        def __call__(self, serial, sequence, img):
            time.sleep(0.05)
            real_call(self, serial, sequence, img)

    slow = SlowSink()
    scfg.sink = slow
    server = net.Server(scfg).start()
    try:
        m, _, _ = small_scene_measurement(seed=6, n_bits=24_000,
                                          reflector=(0.1, 0.0, 0.6))
        net.run_client("127.0.0.1", server.port, 8, [m] * 12, "server", cfg,
                       array, exc)
        assert _wait_for(lambda: len(slow.items) == 12)
    finally:
        server.stop()
    assert [q for _, q, _ in slow.items] == list(range(12))
    assert server.stats.snapshot()["queue_highwater"] <= 1


def test_client_error_when_no_server():
    with pytest.raises(ClientError):
        a.Client("127.0.0.1", 1, 0, [], "server",
                 a.ProcessingConfig(grid=a.direction_grid_2d(3, -0.1, 0.1)),
                 small_array(), small_chirp()).run()


def test_stats_json():
    stats = net.ServerStats()
    stats.bump("enqueued")
    doc = json.loads(stats.to_json())
    assert doc["enqueued"] == 1
    assert "queue_highwater" in doc

"""Measurement streaming: clients push framed packages over TCP to a server
whose bounded queue feeds a worker pool, with results reordered per device
before reaching the sink.

Processing placement is all-or-nothing: either clients send raw captures and
the server runs the pipeline ("server"), or clients process locally and send
finished images ("client"). Both placements call the same pure
process_measurement, so the sink output is identical either way.

Wire layout, little-endian:
  magic "RTIP" | version u8 | payload_kind u8 | reserved u16 |
  device_serial u32 | sequence u32 | timestamp_us u64 |
  config_fingerprint u64 | payload_len u32 | payload | crc32 u32
The CRC covers every byte before it. An empty payload gives the minimal
40-byte package.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imaging, pdm
from .arrays import MicArray, array_doc
from .dsp import AcousticImage, ProcessingConfig, process_measurement
from .errors import (ClientError, CrcError, FramingError, LengthError,
                     MagicError, ParameterError, VersionError)
from .fingerprint import fingerprint64
from .waveform import Waveform

log = logging.getLogger("airsonar.net")

RTIP_MAGIC = b"RTIP"
RTIP_VERSION = 1
KIND_RAW_PDM = 0
KIND_ACOUSTIC_IMAGE = 1
_KIND_NAMES = {KIND_RAW_PDM: "raw_pdm", KIND_ACOUSTIC_IMAGE: "acoustic_image"}

_HEADER = struct.Struct("<4sBBHIIQQI")  # ends with payload_len
_CRC = struct.Struct("<I")
MIN_PACKAGE_BYTES = _HEADER.size + _CRC.size  # 40
MAX_PAYLOAD_BYTES = 1 << 26

_CONNECT_ATTEMPTS = 3
_BACKOFF_BASE_S = 0.05


@dataclass
class MeasurementPackage:
    device_serial: int
    sequence: int
    timestamp_us: int
    payload_kind: int  # KIND_RAW_PDM or KIND_ACOUSTIC_IMAGE
    config_fingerprint: int
    payload: bytes

    def __post_init__(self):
        if self.payload_kind not in _KIND_NAMES:
            raise ParameterError(f"unknown payload kind {self.payload_kind}")


def encode_package(p: MeasurementPackage) -> bytes:
    if len(p.payload) > MAX_PAYLOAD_BYTES:
        raise ParameterError(f"payload of {len(p.payload)} bytes exceeds the "
                             f"{MAX_PAYLOAD_BYTES} byte cap")
    head = _HEADER.pack(RTIP_MAGIC, RTIP_VERSION, p.payload_kind, 0,
                        p.device_serial, p.sequence, p.timestamp_us,
                        p.config_fingerprint, len(p.payload))
    body = head + p.payload
    return body + _CRC.pack(zlib.crc32(body))


def decode_package(buf: bytes) -> MeasurementPackage:
    if len(buf) < MIN_PACKAGE_BYTES:
        raise LengthError(f"package of {len(buf)} bytes below the 40-byte minimum")
    (magic, version, kind, _reserved, serial, sequence, timestamp_us,
     fingerprint, payload_len) = _HEADER.unpack_from(buf)
    if magic != RTIP_MAGIC:
        raise MagicError(f"bad package magic {magic!r}")
    if version != RTIP_VERSION:
        raise VersionError(f"unsupported package version {version}")
    if kind not in _KIND_NAMES:
        raise FramingError(f"unknown payload kind {kind}")
    if payload_len > MAX_PAYLOAD_BYTES:
        raise LengthError(f"payload length {payload_len} exceeds cap")
    if len(buf) != MIN_PACKAGE_BYTES + payload_len:
        raise LengthError(f"expected {MIN_PACKAGE_BYTES + payload_len} bytes, "
                          f"got {len(buf)}")
    body = buf[:_HEADER.size + payload_len]
    (crc,) = _CRC.unpack_from(buf, _HEADER.size + payload_len)
    if crc != zlib.crc32(body):
        raise CrcError("package checksum mismatch")
    return MeasurementPackage(serial, sequence, timestamp_us, kind,
                              fingerprint, bytes(buf[_HEADER.size:
                                                     _HEADER.size + payload_len]))


def encode_image_payload(img: AcousticImage) -> bytes:
    """u32 metadata length | metadata JSON | raw float64 LE intensity."""
    meta = json.dumps(imaging.image_metadata(img),
                      separators=(",", ":")).encode()
    raw = img.intensity.astype("<f8", copy=False).tobytes()
    return struct.pack("<I", len(meta)) + meta + raw


def decode_image_payload(buf: bytes) -> AcousticImage:
    if len(buf) < 4:
        raise LengthError("image payload too short")
    (meta_len,) = struct.unpack_from("<I", buf)
    if len(buf) < 4 + meta_len:
        raise LengthError("image payload metadata truncated")
    try:
        meta = json.loads(buf[4:4 + meta_len])
    except json.JSONDecodeError as e:
        raise FramingError(f"image metadata does not parse: {e}") from e
    intensity = np.frombuffer(buf, dtype="<f8", offset=4 + meta_len)
    expect = meta["n_directions"] * meta["n_range_samples"]
    if intensity.size != expect:
        raise LengthError(f"expected {expect} intensity values, "
                          f"got {intensity.size}")
    return imaging.image_from_parts(meta, intensity.astype(np.float64))


def config_fingerprint(processing: ProcessingConfig, array: MicArray,
                       excitation: Waveform) -> int:
    """Fingerprint of everything both ends must agree on."""
    return fingerprint64({"processing": processing.to_doc(),
                          "array": array_doc(array),
                          "excitation": excitation.params})


@dataclass
class ServerStats:
    enqueued: int = 0
    processed: int = 0
    rejected: int = 0
    decode_errors: int = 0
    connections: int = 0
    queue_highwater: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def bump(self, name: str, amount: int = 1):
        with self._lock:
            setattr(self, name, getattr(self, name) + amount)

    def note_depth(self, depth: int):
        with self._lock:
            if depth > self.queue_highwater:
                self.queue_highwater = depth

    def snapshot(self) -> dict:
        with self._lock:
            return {"enqueued": self.enqueued, "processed": self.processed,
                    "rejected": self.rejected,
                    "decode_errors": self.decode_errors,
                    "connections": self.connections,
                    "queue_highwater": self.queue_highwater}

    def to_json(self) -> str:
        return json.dumps(self.snapshot(), separators=(",", ":"))


@dataclass
class ServerConfig:
    processing: ProcessingConfig
    array: MicArray
    excitation: Waveform
    listen_port: int = 0  # 0 picks an ephemeral port
    worker_count: int = 4
    queue_capacity: int = 64
    processing_placement: str = "server"  # or "client"
    sink: object = None  # directory path or callable(serial, sequence, image)

    def __post_init__(self):
        if not 1 <= self.worker_count <= 64:
            raise ParameterError("worker_count must be in 1..64")
        if not 1 <= self.queue_capacity <= 4096:
            raise ParameterError("queue_capacity must be in 1..4096")
        if self.processing_placement not in ("client", "server"):
            raise ParameterError(
                f"unknown placement {self.processing_placement!r}")


class DirectorySink:
    """Writes every image as {serial}_{sequence}.pgm/.csv/.json."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def __call__(self, serial: int, sequence: int, img: AcousticImage):
        base = self.directory / f"{serial}_{sequence}"
        base.with_suffix(".pgm").write_bytes(imaging.export_pgm(img))
        base.with_suffix(".csv").write_bytes(imaging.export_csv(img))
        base.with_suffix(".json").write_text(
            json.dumps(imaging.image_metadata(img), indent=2))


_STOP = object()


class Server:
    """Accepts package streams, processes them on a worker pool, and hands
    per-device-ordered images to the sink.

    Structure: one accept loop, one reader thread per connection feeding a
    bounded queue (blocking puts give transport backpressure), worker_count
    workers, and a single reorder stage that releases results in sequence
    order per device serial.
    """

    def __init__(self, cfg: ServerConfig):
        self.cfg = cfg
        self.stats = ServerStats()
        self.expected_fingerprint = config_fingerprint(
            cfg.processing, cfg.array, cfg.excitation)
        self._queue: queue.Queue = queue.Queue(cfg.queue_capacity)
        self._done: queue.Queue = queue.Queue()
        self._sink = (DirectorySink(cfg.sink)
                      if isinstance(cfg.sink, (str, Path)) else cfg.sink)
        self._listener: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._conn_lock = threading.Lock()
        self._conns: list[socket.socket] = []
        self._stopping = threading.Event()
        self.port: int | None = None

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> "Server":
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind(("127.0.0.1", self.cfg.listen_port))
        self._listener.listen()
        self.port = self._listener.getsockname()[1]
        accept = threading.Thread(target=self._accept_loop, daemon=True,
                                  name="accept")
        accept.start()
        self._threads.append(accept)
        for i in range(self.cfg.worker_count):
            w = threading.Thread(target=self._worker, daemon=True,
                                 name=f"worker-{i}")
            w.start()
            self._threads.append(w)
        reorder = threading.Thread(target=self._reorder_loop, daemon=True,
                                   name="reorder")
        reorder.start()
        self._threads.append(reorder)
        log.info("server listening on port %d", self.port)
        return self

    def stop(self):
        """Stop accepting, drain everything already received, then shut down."""
        self._stopping.set()
        if self._listener is not None:
            try:
                # close() alone leaves a blocked accept() sleeping on Linux
                self._listener.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._listener.close()
        with self._conn_lock:
            for conn in self._conns:
                try:
                    conn.shutdown(socket.SHUT_RD)
                except OSError:
                    pass
        threads = list(self._threads)
        for t in threads:
            if t.name.startswith("reader") or t.name == "accept":
                t.join(timeout=10)
        for _ in range(self.cfg.worker_count):
            self._queue.put(_STOP)
        for t in threads:
            if t.name.startswith("worker"):
                t.join(timeout=60)
        self._done.put(_STOP)
        for t in threads:
            if t.name == "reorder":
                t.join(timeout=60)

    # -- pipeline stages ----------------------------------------------------

    def _accept_loop(self):
        while not self._stopping.is_set():
            try:
                conn, addr = self._listener.accept()
            except OSError:
                return
            self.stats.bump("connections")
            with self._conn_lock:
                self._conns.append(conn)
            t = threading.Thread(target=self._reader, args=(conn,),
                                 daemon=True, name=f"reader-{addr[1]}")
            t.start()
            self._threads.append(t)

    def _recv_exact(self, conn: socket.socket, n: int) -> bytes | None:
        chunks = []
        remaining = n
        while remaining:
            try:
                chunk = conn.recv(min(remaining, 1 << 20))
            except OSError:
                return None
            if not chunk:
                return None
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def _reader(self, conn: socket.socket):
        consecutive = 0
        try:
            while True:
                head = self._recv_exact(conn, _HEADER.size)
                if head is None:
                    return
                try:
                    magic, version, _k, _r, _s, _q, _t, _f, payload_len = \
                        _HEADER.unpack(head)
                    if magic != RTIP_MAGIC:
                        raise MagicError(f"bad package magic {magic!r}")
                    if version != RTIP_VERSION:
                        raise VersionError(f"unsupported version {version}")
                    if payload_len > MAX_PAYLOAD_BYTES:
                        raise LengthError(f"payload length {payload_len}")
                except FramingError as e:
                    # frame boundary is lost; nothing left to resync on
                    self.stats.bump("decode_errors")
                    log.warning("dropping connection, unframeable header: %s", e)
                    return
                rest = self._recv_exact(conn, payload_len + _CRC.size)
                if rest is None:
                    return
                try:
                    package = decode_package(head + rest)
                except FramingError as e:
                    self.stats.bump("decode_errors")
                    consecutive += 1
                    log.warning("bad package (%d consecutive): %s",
                                consecutive, e)
                    if consecutive >= 3:
                        return
                    continue
                consecutive = 0
                self._queue.put(package)
                self.stats.bump("enqueued")
                self.stats.note_depth(self._queue.qsize())
        finally:
            conn.close()

    def _worker(self):
        while True:
            item = self._queue.get()
            if item is _STOP:
                return
            result = None
            try:
                result = self._process(item)
            except Exception:
                log.exception("worker failed on package (%d, %d)",
                              item.device_serial, item.sequence)
                self.stats.bump("rejected")
            self._done.put((item.device_serial, item.sequence, result))

    def _process(self, p: MeasurementPackage) -> AcousticImage | None:
        if p.config_fingerprint != self.expected_fingerprint:
            log.warning("protocol error: package (%d, %d) fingerprint %x does "
                        "not match server %x, rejecting", p.device_serial,
                        p.sequence, p.config_fingerprint,
                        self.expected_fingerprint)
            self.stats.bump("rejected")
            return None
        if p.payload_kind == KIND_ACOUSTIC_IMAGE:
            return decode_image_payload(p.payload)
        # raw capture: only the server placement may process it
        if self.cfg.processing_placement != "server":
            log.warning("protocol error: raw capture (%d, %d) under client "
                        "placement, rejecting", p.device_serial, p.sequence)
            self.stats.bump("rejected")
            return None
        m = pdm.measurement_from_bytes(p.payload)
        return process_measurement(m, self.cfg.processing, self.cfg.array,
                                   self.cfg.excitation)

    def _reorder_loop(self):
        expected: dict[int, int] = {}
        pending: dict[int, dict[int, AcousticImage | None]] = {}
        while True:
            item = self._done.get()
            if item is _STOP:
                for serial, buf in pending.items():
                    if buf:
                        log.warning("device %d stopped with %d results stuck "
                                    "behind a sequence gap", serial, len(buf))
                return
            serial, seq, img = item
            pending.setdefault(serial, {})[seq] = img
            nxt = expected.get(serial, 0)
            buf = pending[serial]
            while nxt in buf:
                img = buf.pop(nxt)
                if img is not None:
                    if self._sink is not None:
                        try:
                            self._sink(serial, nxt, img)
                        except Exception:
                            log.exception("sink failed for (%d, %d)",
                                          serial, nxt)
                    self.stats.bump("processed")
                nxt += 1
            expected[serial] = nxt


def run_server(cfg: ServerConfig) -> Server:
    """Build and start a server; stop it with .stop()."""
    return Server(cfg).start()


class Client:
    """Streams measurements from a source iterable to a server.

    Assigns sequence numbers 0, 1, ... in source order. Under the "client"
    placement each measurement is processed locally and shipped as an image;
    under "server" the raw capture bytes go out. Connection failures retry
    with exponential backoff, 3 attempts, then raise ClientError; the
    in-flight package is resent after a reconnect.
    """

    def __init__(self, host: str, port: int, device_serial: int, source,
                 placement: str, processing: ProcessingConfig,
                 array: MicArray, excitation: Waveform):
        if placement not in ("client", "server"):
            raise ParameterError(f"unknown placement {placement!r}")
        self.host = host
        self.port = port
        self.device_serial = device_serial
        self.source = source
        self.placement = placement
        self.processing = processing
        self.array = array
        self.excitation = excitation
        self.fingerprint = config_fingerprint(processing, array, excitation)
        self.sent = 0
        self._sock: socket.socket | None = None

    def _connect(self):
        last = None
        for attempt in range(_CONNECT_ATTEMPTS):
            try:
                self._sock = socket.create_connection((self.host, self.port),
                                                      timeout=30)
                return
            except OSError as e:
                last = e
                time.sleep(_BACKOFF_BASE_S * 2**attempt)
        raise ClientError(f"could not reach {self.host}:{self.port} after "
                          f"{_CONNECT_ATTEMPTS} attempts: {last}")

    def _package(self, m: pdm.Measurement, sequence: int) -> bytes:
        if self.placement == "client":
            img = process_measurement(m, self.processing, self.array,
                                      self.excitation)
            payload = encode_image_payload(img)
            kind = KIND_ACOUSTIC_IMAGE
        else:
            payload = pdm.measurement_to_bytes(m)
            kind = KIND_RAW_PDM
        return encode_package(MeasurementPackage(
            self.device_serial, sequence, m.timestamp_us, kind,
            self.fingerprint, payload))

    def run(self):
        """Send everything from the source, then close. Blocking."""
        self._connect()
        try:
            for sequence, m in enumerate(self.source):
                blob = self._package(m, sequence)
                for attempt in range(_CONNECT_ATTEMPTS):
                    try:
                        self._sock.sendall(blob)
                        break
                    except OSError as e:
                        log.warning("send failed (attempt %d): %s",
                                    attempt + 1, e)
                        self._sock.close()
                        if attempt == _CONNECT_ATTEMPTS - 1:
                            raise ClientError(
                                f"send failed after {_CONNECT_ATTEMPTS} "
                                f"attempts: {e}") from e
                        time.sleep(_BACKOFF_BASE_S * 2**attempt)
                        self._connect()
                self.sent += 1
        finally:
            if self._sock is not None:
                self._sock.close()
        return self


def run_client(host: str, port: int, device_serial: int, source,
               placement: str, processing: ProcessingConfig, array: MicArray,
               excitation: Waveform) -> Client:
    """Stream a whole source to the server, blocking until done."""
    client = Client(host, port, device_serial, source, placement, processing,
                    array, excitation)
    client.run()
    return client

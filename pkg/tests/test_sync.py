import numpy as np
import pytest

import airsonar as a
from airsonar import pdm, sync
from airsonar.errors import CapacityError, ParameterError, StateError
from conftest import quiet_measurement, small_scene_measurement


def test_schedule_simultaneous_all_zero():
    s = a.make_schedule("simultaneous", [11, 22, 33])
    assert s.offsets_us == [0, 0, 0]
    assert s.device_ids == [11, 22, 33]


def test_schedule_sequenced_staggers_by_interval():
    s = a.make_schedule("sequenced", ["a", "b", "c"], interval_us=40_000)
    assert s.offsets_us == [0, 40_000, 80_000]


def test_schedule_capacity_and_validation():
    with pytest.raises(CapacityError):
        a.make_schedule("simultaneous", list(range(7)))
    with pytest.raises(CapacityError):
        a.make_schedule("simultaneous", [])
    with pytest.raises(ParameterError):
        a.make_schedule("simultaneous", [1, 1])
    with pytest.raises(ParameterError):
        a.make_schedule("sequenced", [1, 2], interval_us=0)
    with pytest.raises(ParameterError):
        a.make_schedule("staggered", [1, 2])


def test_burst_length_is_thirteen_chips():
    burst = sync._burst(pdm.FS_PDM)
    # 8 cycles of 50 kHz at 4.5 MHz = 720 samples per chip, 13 chips
    assert burst.size == 13 * 720 == 9360
    assert np.max(np.abs(burst)) <= 1.0


def test_inject_detect_round_trip_ids():
    m = quiet_measurement(n_bits=163_840, seed=1)
    for k in (0, 7, 15):
        det = a.detect_marker(a.inject_marker(m, k))
        assert det is not None
        assert det.marker_id == k
        assert abs(det.offset_samples) <= 1


def test_inject_detect_with_offset():
    m = quiet_measurement(n_bits=163_840, seed=2)
    marked = a.inject_marker(m, 3, offset_bits=5000)
    det = a.detect_marker(marked)
    assert det.marker_id == 3
    assert abs(det.offset_samples - 500) <= 1


def test_detect_on_unmarked_returns_none():
    assert a.detect_marker(quiet_measurement(n_bits=40_960, seed=3)) is None


def test_detect_survives_scene_content():
    m, array, exc = small_scene_measurement(seed=4, noise_rms=0.002,
                                            n_bits=163_840,
                                            reflector=(0.3, 0.0, 1.5))
    marked = a.inject_marker(m, 5)
    det = a.detect_marker(marked)
    assert det.marker_id == 5
    assert abs(det.offset_samples) <= 1


def test_inject_preserves_other_channels():
    m = quiet_measurement(n_channels=3, n_bits=163_840, seed=5)
    marked = a.inject_marker(m, 2)
    assert np.array_equal(marked.stream.words[1:], m.stream.words[1:])
    assert not np.array_equal(marked.stream.words[0], m.stream.words[0])
    assert marked.sync_marker == 2


def test_double_injection_rejected():
    m = quiet_measurement(n_bits=163_840, seed=6)
    marked = a.inject_marker(m, 1)
    with pytest.raises(StateError):
        a.inject_marker(marked, 2)
    # even when the flag is stripped, the audible marker is found and refused
    bare = a.Measurement(marked.stream, marked.device_serial,
                         marked.timestamp_us)
    with pytest.raises(StateError):
        a.inject_marker(bare, 2)


def test_inject_validation():
    m = quiet_measurement(n_bits=163_840, seed=7)
    with pytest.raises(ParameterError):
        a.inject_marker(m, 16)
    with pytest.raises(ParameterError):
        a.inject_marker(m, -1)
    short = quiet_measurement(n_bits=3200, seed=7)
    with pytest.raises(ParameterError):
        a.inject_marker(short, 0)
    with pytest.raises(ParameterError):
        # id 15 needs 155,520 bits; a 40,960-bit capture cannot hold it
        a.inject_marker(quiet_measurement(n_bits=40_960, seed=7), 15)

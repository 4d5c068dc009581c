"""Shared builders and measurement instruments for the tests."""

import numpy as np

import airsonar as a

_ACCEPTANCE_LINES = []


def record_acceptance_line(line):
    # stashed so the verdicts survive output capture; printed in the summary
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def sine_fit_snr_db(x, fs, f0, band=(20e3, 80e3), skip=256):
    """In-band SNR of a decoded tone, sine-fit method.

    A least-squares fit of sin/cos/DC at the known frequency separates the
    tone from everything else, so coherent limit cycles and filter droop do
    not masquerade as noise. Power ratio is taken on Hann-windowed spectra
    restricted to the band. The first samples are dropped to let the decode
    filter settle.
    """
    x = np.asarray(x, dtype=np.float64)[skip:]
    t = np.arange(x.size) / fs
    basis = np.column_stack([np.sin(2 * np.pi * f0 * t),
                             np.cos(2 * np.pi * f0 * t),
                             np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(basis, x, rcond=None)
    fit = basis @ coef
    resid = x - fit
    w = np.hanning(x.size)
    freqs = np.fft.rfftfreq(x.size, 1.0 / fs)
    sel = (freqs >= band[0]) & (freqs <= band[1])
    p_sig = (np.abs(np.fft.rfft(fit * w)) ** 2)[sel].sum()
    p_noise = (np.abs(np.fft.rfft(resid * w)) ** 2)[sel].sum()
    return 10.0 * np.log10(p_sig / p_noise)


def quiet_measurement(n_channels=1, n_bits=163_840, seed=0, noise_rms=0.01,
                      serial=0):
    """Measurement holding encoded low-level white noise, no echoes."""
    rng = np.random.default_rng(seed)
    bits = []
    for ch in range(n_channels):
        x = np.clip(rng.normal(0.0, noise_rms, n_bits), -1.0, 1.0)
        bits.append(a.pdm_encode(x, a.FS_PDM))
    stream = a.pack_channels(bits, a.FS_PDM)
    return a.Measurement(stream, serial, 0)


def small_array():
    return a.grid_array(4, 4, 0.009)


def small_chirp(duration=0.001):
    return a.log_fm_chirp(20e3, 80e3, duration, a.FS_DECODED, 0.1)


def small_scene_measurement(seed=0, noise_rms=0.0, n_bits=32_000,
                            reflector=(0.2, 0.0, 0.85), serial=0,
                            n_channels_array=None, reflectivity=1.0):
    """Short capture with one close reflector that fits the window."""
    array = n_channels_array or small_array()
    exc = small_chirp()
    sc = a.Scene([a.Reflector(np.asarray(reflector, dtype=np.float64),
                              reflectivity)],
                 noise_rms=noise_rms, seed=seed)
    m = a.simulate_measurement(sc, array, exc, device_serial=serial,
                               n_bits_per_channel=n_bits)
    return m, array, exc

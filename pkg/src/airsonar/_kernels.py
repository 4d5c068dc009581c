"""Numba inner loops for the two hot paths: sigma-delta encoding and
delay-and-sum accumulation. Both are serial and index-deterministic, so
results never depend on scheduling."""

import numpy as np
from numba import njit


@njit(cache=True)
def sigma_delta_encode(x):
    """Second-order single-bit sigma-delta modulator.

    Two cascaded integrators clipped at +/-2 for stability, 1-bit quantizer,
    full-scale +/-1 feedback. State starts at zero; one output bit per input
    sample.
    """
    n = x.size
    bits = np.empty(n, np.uint8)
    i1 = 0.0
    i2 = 0.0
    fb = 0.0
    for k in range(n):
        i1 += x[k] - fb
        if i1 > 2.0:
            i1 = 2.0
        elif i1 < -2.0:
            i1 = -2.0
        i2 += i1 - fb
        if i2 > 2.0:
            i2 = 2.0
        elif i2 < -2.0:
            i2 = -2.0
        if i2 >= 0.0:
            bits[k] = 1
            fb = 1.0
        else:
            bits[k] = 0
            fb = -1.0
    return bits


@njit(cache=True)
def delay_and_sum_accumulate(signals, delays, out):
    """out[d, t] = mean_m signals[m, t + delays[d, m]], zero-padded at the tail."""
    n_dirs, n_mics = delays.shape
    n = signals.shape[1]
    inv = 1.0 / n_mics
    for d in range(n_dirs):
        for m in range(n_mics):
            dd = delays[d, m]
            row = signals[m]
            for t in range(n - dd):
                out[d, t] += row[t + dd]
        for t in range(n):
            out[d, t] *= inv

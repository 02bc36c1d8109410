"""Shared helpers: periodic test waveforms with exact symbol instants."""

import numpy as np

from dm_ldbp.field import DualPolField

QAM_LEVELS = np.array([-3.0, -1.0, 1.0, 3.0]) / np.sqrt(10.0)


def random_qam_symbols(rng, n):
    return rng.choice(QAM_LEVELS, size=n) + 1j * rng.choice(QAM_LEVELS, size=n)


def raised_cosine_spectrum(freqs, baud, rolloff):
    t = 1.0 / baud
    af = np.abs(freqs)
    h = np.zeros_like(af)
    flat = af <= (1.0 - rolloff) / (2.0 * t)
    h[flat] = 1.0
    if rolloff > 0:
        roll = (~flat) & (af <= (1.0 + rolloff) / (2.0 * t))
        h[roll] = 0.5 * (
            1.0 + np.cos(np.pi * t / rolloff * (af[roll] - (1.0 - rolloff) / (2.0 * t)))
        )
    return h


def circular_rc_field(sym_x, sym_y, sps, baud, rolloff=0.06):
    """Periodic raised-cosine waveform; symbol k sits exactly at sample k*sps."""
    n = sym_x.size * sps
    fs = baud * sps
    h = raised_cosine_spectrum(np.fft.fftfreq(n, 1.0 / fs), baud, rolloff)

    def shape(sym):
        stuffed = np.zeros(n, dtype=np.complex128)
        stuffed[::sps] = sym
        return np.fft.ifft(np.fft.fft(stuffed) * h) * sps

    return DualPolField(shape(sym_x), shape(sym_y), fs)


def scaled_to_power(fld, p_watt):
    return fld.scaled(np.sqrt(p_watt / fld.power()))

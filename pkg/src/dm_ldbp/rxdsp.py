"""Receiver DSP chain.

Order in the pipeline: channel selection (shift + root-raised-cosine low-pass)
at the oversampled rate, rate conversion to 2 samples/symbol, bulk CD removal,
frame synchronization against the known transmit symbols, then a data-aided
T/2-spaced 2x2 butterfly equalizer that is trained once and afterwards applied
as a frozen linear filter so the nonlinear equalizers downstream see a 2
samples/symbol stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AdaptationError, ParameterError, SyncError
from .field import (
    DEFAULT_WAVELENGTH,
    DualPolField,
    FirFilter,
    apply_fir,
    frequency_shift,
    rrc_taps,
)
from .link import apply_dispersion


def channel_select(
    fld: DualPolField,
    offset_hz: float,
    baud: float,
    rolloff: float,
    span_symbols: int = 64,
) -> DualPolField:
    """Shift the wanted channel to DC and matched-filter it.

    The returned field keeps the input sample rate; decimation is a separate
    step. center_offset is reset to zero: downstream processing treats the
    selected channel as its own baseband signal.
    """
    sps = fld.sample_rate / baud
    isps = int(round(sps))
    if abs(sps - isps) > 1e-9 * max(1, isps) or isps < 2:
        raise ParameterError(
            f"sample_rate/baud = {sps} is not an integer >= 2; cannot build "
            "the selection filter"
        )
    shifted = frequency_shift(fld, -offset_hz) if offset_hz != 0.0 else fld
    lpf = FirFilter(rrc_taps(rolloff, isps, span_symbols))
    out = apply_fir(shifted, lpf)
    return DualPolField(out.x, out.y, out.sample_rate, center_offset=0.0)


def cd_compensate(
    fld: DualPolField, accumulated_ps_nm: float, wavelength_m: float = DEFAULT_WAVELENGTH
) -> DualPolField:
    """Remove a lumped accumulated dispersion of D*L = accumulated_ps_nm."""
    if accumulated_ps_nm == 0.0:
        return fld
    return apply_dispersion(fld, -accumulated_ps_nm, wavelength_m)


def synchronize(
    fld: DualPolField,
    symbols_x: np.ndarray,
    symbols_y: np.ndarray,
    sps: int,
    min_peak_ratio: float = 5.0,
) -> tuple[DualPolField, int]:
    """Find and remove the circular lag between waveform and reference symbols.

    All four polarization pairings are correlated so an arbitrary rotation of
    the polarization state cannot hide the peak. Raises SyncError when the best
    correlation peak does not stand out from the background, which is the
    symptom of a desynchronized or dead channel.
    """
    n = fld.n_samples
    refs = []
    for sym in (np.asarray(symbols_x), np.asarray(symbols_y)):
        stuffed = np.zeros(n, dtype=np.complex128)
        stuffed[: sym.size * sps : sps] = sym
        refs.append(np.fft.fft(stuffed))
    rx = [np.fft.fft(fld.x), np.fft.fft(fld.y)]
    score = np.zeros(n)
    for r in rx:
        for s in refs:
            score += np.abs(np.fft.ifft(r * np.conj(s)))
    lag = int(np.argmax(score))
    peak = score[lag]
    # background: everything except a small window around the peak
    guard = max(2 * sps, 4)
    idx = (np.arange(n) - lag) % n
    background = score[(idx > guard) & (idx < n - guard)]
    floor = float(np.mean(background)) if background.size else 0.0
    if floor <= 0.0 or peak < min_peak_ratio * floor:
        raise SyncError(
            f"correlation peak {peak:.3e} is below {min_peak_ratio}x the "
            f"background {floor:.3e}; waveform and reference do not match"
        )
    if lag == 0:
        return fld, 0
    return fld.with_samples(np.roll(fld.x, -lag), np.roll(fld.y, -lag)), lag


@dataclass
class MimoConfig:
    """Settings for the data-aided LMS butterfly equalizer."""

    n_taps: int = 15
    step_size: float = 1e-3
    passes: int = 2
    max_tap_energy: float = 1e3

    def validate(self) -> "MimoConfig":
        if self.n_taps < 1 or self.n_taps % 2 == 0:
            raise ParameterError(f"n_taps must be odd and positive, got {self.n_taps}")
        if self.step_size <= 0:
            raise ParameterError(f"step_size must be positive, got {self.step_size}")
        if self.passes < 1:
            raise ParameterError(f"passes must be >= 1, got {self.passes}")
        return self


@dataclass
class Mimo2x2:
    """2x2 butterfly FIR filter bank: out_x = wxx*x + wxy*y, out_y = wyx*x + wyy*y.

    Taps act as a correlation with a centered window, so the equalizer itself
    adds no group delay.
    """

    wxx: np.ndarray
    wxy: np.ndarray
    wyx: np.ndarray
    wyy: np.ndarray

    @classmethod
    def identity(cls, n_taps: int = 15) -> "Mimo2x2":
        if n_taps < 1 or n_taps % 2 == 0:
            raise ParameterError(f"n_taps must be odd and positive, got {n_taps}")
        w = np.zeros(n_taps, dtype=np.complex128)
        w[(n_taps - 1) // 2] = 1.0
        return cls(w.copy(), np.zeros_like(w), np.zeros_like(w), w.copy())

    @property
    def n_taps(self) -> int:
        return self.wxx.size

    @property
    def center(self) -> int:
        return (self.n_taps - 1) // 2

    def tap_energy(self) -> float:
        return float(
            sum(
                np.sum(np.abs(w) ** 2)
                for w in (self.wxx, self.wxy, self.wyx, self.wyy)
            )
        )


def _check_health(eq: Mimo2x2, max_energy: float) -> None:
    e = eq.tap_energy()
    if not np.isfinite(e) or e > max_energy:
        raise AdaptationError(
            f"equalizer taps diverged (energy {e:.3e} > {max_energy:.1e}); "
            "reduce the step size"
        )


def mimo_train(
    eq: Mimo2x2,
    fld: DualPolField,
    symbols_x: np.ndarray,
    symbols_y: np.ndarray,
    cfg: MimoConfig | None = None,
    sps: int = 2,
    offset: int = 0,
) -> tuple[Mimo2x2, np.ndarray]:
    """Data-aided LMS adaptation at the symbol instants.

    Symbol i is taken to sit at sample offset + sps*i (run synchronize first).
    Updates happen in place; the trained equalizer and the per-pass mean
    squared error trace are returned.
    """
    cfg = (cfg or MimoConfig()).validate()
    if eq.n_taps != cfg.n_taps:
        raise ParameterError(
            f"equalizer has {eq.n_taps} taps but config says {cfg.n_taps}"
        )
    dx = np.asarray(symbols_x, dtype=np.complex128)
    dy = np.asarray(symbols_y, dtype=np.complex128)
    if dx.size != dy.size:
        raise ParameterError("reference symbol streams must have equal length")
    x, y = fld.x, fld.y
    k, c, n = eq.n_taps, eq.center, fld.n_samples
    mu = cfg.step_size
    trace = np.empty(cfg.passes)
    for p in range(cfg.passes):
        acc = 0.0
        count = 0
        for i in range(dx.size):
            n0 = offset + sps * i - c
            if n0 < 0 or n0 + k > n:
                continue
            ux = x[n0 : n0 + k]
            uy = y[n0 : n0 + k]
            zx = np.dot(eq.wxx, ux) + np.dot(eq.wxy, uy)
            zy = np.dot(eq.wyx, ux) + np.dot(eq.wyy, uy)
            ex = dx[i] - zx
            ey = dy[i] - zy
            cux = np.conj(ux)
            cuy = np.conj(uy)
            eq.wxx += mu * ex * cux
            eq.wxy += mu * ex * cuy
            eq.wyx += mu * ey * cux
            eq.wyy += mu * ey * cuy
            acc += abs(ex) ** 2 + abs(ey) ** 2
            count += 1
            if count % 64 == 0:
                _check_health(eq, cfg.max_tap_energy)
        if count == 0:
            raise ParameterError("no symbol window fits inside the waveform")
        _check_health(eq, cfg.max_tap_energy)
        trace[p] = acc / (2 * count)
    return eq, trace


def _filter_bank(u: np.ndarray, w: np.ndarray, c: int) -> np.ndarray:
    # out[n] = sum_k w[k] * u[n - c + k], zero padded at the edges
    k = w.size
    full = np.convolve(u, w[::-1], mode="full")
    return full[k - 1 - c : k - 1 - c + u.size]


def mimo_apply(eq: Mimo2x2, fld: DualPolField) -> DualPolField:
    """Run the frozen butterfly filter over the full-rate waveform."""
    c = eq.center
    out_x = _filter_bank(fld.x, eq.wxx, c) + _filter_bank(fld.y, eq.wxy, c)
    out_y = _filter_bank(fld.x, eq.wyx, c) + _filter_bank(fld.y, eq.wyy, c)
    return fld.with_samples(out_x, out_y)

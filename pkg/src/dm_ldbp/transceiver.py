"""DP-16QAM transceiver: bits, symbols, WDM assembly, quality metrics.

Gray mapping per quadrature: bit pairs (b0,b1) -> PAM4 level with
00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3, scaled by 1/sqrt(10) so the
constellation has unit mean power. Bits per symbol are ordered
(I msb, I lsb, Q msb, Q lsb).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfcinv

from .errors import ParameterError
from .field import (
    DualPolField,
    FirFilter,
    apply_fir,
    dbm_to_watt,
    frequency_shift,
    rrc_taps,
)

_PAM = np.array([-3.0, -1.0, 1.0, 3.0]) / np.sqrt(10.0)
# Gray bit pair (msb, lsb) for each PAM level index
_PAM_BITS = np.array([[0, 0], [0, 1], [1, 1], [1, 0]], dtype=np.uint8)
# inverse: bits (msb,lsb) as msb*2+lsb -> level index
_BITS_TO_LEVEL = np.zeros(4, dtype=np.int64)
for _i, (_m, _l) in enumerate(_PAM_BITS):
    _BITS_TO_LEVEL[_m * 2 + _l] = _i


def qam16_modulate(bits: np.ndarray) -> np.ndarray:
    """Map bits (n, 4) or flat multiple-of-4 vector to unit-power symbols."""
    b = np.asarray(bits, dtype=np.uint8)
    if b.ndim == 1:
        if b.size % 4:
            raise ParameterError("flat bit vector length must be a multiple of 4")
        b = b.reshape(-1, 4)
    if b.ndim != 2 or b.shape[1] != 4:
        raise ParameterError(f"expected (n, 4) bits, got shape {b.shape}")
    if np.any(b > 1):
        raise ParameterError("bits must be 0/1")
    i_lvl = _BITS_TO_LEVEL[b[:, 0] * 2 + b[:, 1]]
    q_lvl = _BITS_TO_LEVEL[b[:, 2] * 2 + b[:, 3]]
    return _PAM[i_lvl] + 1j * _PAM[q_lvl]


def _pam_decide(v: np.ndarray) -> np.ndarray:
    edges = np.array([-2.0, 0.0, 2.0]) / np.sqrt(10.0)
    return np.searchsorted(edges, v)


def qam16_demodulate(symbols: np.ndarray) -> np.ndarray:
    """Hard decisions back to bits, shape (n, 4)."""
    s = np.asarray(symbols)
    i_lvl = _pam_decide(s.real)
    q_lvl = _pam_decide(s.imag)
    return np.concatenate([_PAM_BITS[i_lvl], _PAM_BITS[q_lvl]], axis=1)


@dataclass(frozen=True)
class SymbolFrame:
    """Known transmitted bits and symbols for both polarizations."""

    bits_x: np.ndarray  # (n, 4) uint8
    bits_y: np.ndarray
    symbols_x: np.ndarray  # (n,) complex, unit mean power
    symbols_y: np.ndarray
    baud: float

    def __post_init__(self):
        n = self.symbols_x.size
        if not (self.symbols_y.size == n and len(self.bits_x) == n == len(self.bits_y)):
            raise ParameterError("frame arrays disagree on symbol count")
        if self.baud <= 0:
            raise ParameterError("baud must be positive")

    @property
    def n_symbols(self) -> int:
        return self.symbols_x.size

    @classmethod
    def random(cls, n_symbols: int, baud: float, rng: np.random.Generator) -> "SymbolFrame":
        bx = rng.integers(0, 2, size=(n_symbols, 4), dtype=np.uint8)
        by = rng.integers(0, 2, size=(n_symbols, 4), dtype=np.uint8)
        return cls(bx, by, qam16_modulate(bx), qam16_modulate(by), baud)


@dataclass(frozen=True)
class WdmConfig:
    n_channels: int = 5
    spacing_hz: float = 37.5e9
    baud: float = 32e9
    rolloff: float = 0.06
    sps: int = 16
    launch_power_dbm: float = -2.0
    rrc_span: int = 64

    def __post_init__(self):
        if self.n_channels < 1 or self.n_channels % 2 == 0:
            raise ParameterError("n_channels must be odd so one channel is centered")
        if self.sps < 2:
            raise ParameterError("need at least 2 samples per symbol")
        if self.spacing_hz < self.baud * (1 + self.rolloff):
            raise ParameterError("channels overlap: spacing below occupied bandwidth")
        edge = (self.n_channels - 1) / 2 * self.spacing_hz + self.baud / 2 * (1 + self.rolloff)
        if edge >= self.sample_rate / 2:
            raise ParameterError("WDM comb does not fit in the simulated band")

    @property
    def sample_rate(self) -> float:
        return self.baud * self.sps

    def channel_offsets_hz(self) -> np.ndarray:
        k = np.arange(self.n_channels) - (self.n_channels - 1) / 2
        return k * self.spacing_hz

    @property
    def center_index(self) -> int:
        return (self.n_channels - 1) // 2


def shape_channel(frame: SymbolFrame, cfg: WdmConfig) -> DualPolField:
    """Upsample and RRC-shape one channel at baseband, scaled to launch power."""
    n = frame.n_symbols * cfg.sps
    ux = np.zeros(n, complex)
    uy = np.zeros(n, complex)
    ux[:: cfg.sps] = frame.symbols_x
    uy[:: cfg.sps] = frame.symbols_y
    fir = FirFilter(rrc_taps(cfg.rolloff, cfg.sps, cfg.rrc_span))
    shaped = apply_fir(DualPolField(ux, uy, cfg.sample_rate), fir)
    p_target = dbm_to_watt(cfg.launch_power_dbm)
    return shaped.scaled(np.sqrt(p_target / shaped.power()))


def build_wdm(frames: list[SymbolFrame], cfg: WdmConfig) -> DualPolField:
    """Shape, shift and sum all channels onto one grid.

    Each channel is scaled to the configured per-channel launch power before
    shifting, so the composite carries n_channels times that power.
    """
    if len(frames) != cfg.n_channels:
        raise ParameterError(f"need {cfg.n_channels} frames, got {len(frames)}")
    n_sym = frames[0].n_symbols
    if any(f.n_symbols != n_sym for f in frames):
        raise ParameterError("all channels must carry the same symbol count")
    total = None
    for frame, off in zip(frames, cfg.channel_offsets_hz()):
        ch = shape_channel(frame, cfg)
        if off != 0.0:
            ch = frequency_shift(ch, off)
        total = ch if total is None else total.with_samples(total.x + ch.x, total.y + ch.y)
    return DualPolField(total.x, total.y, cfg.sample_rate, 0.0)


# ---------------------------------------------------------------------------
# metrics


def q_from_ber(ber: float, n_bits: int | None = None) -> tuple[float, bool]:
    """Gaussian-equivalent Q factor in dB: 20 log10(sqrt(2) erfcinv(2 ber)).

    A ber of exactly zero is undecidable from data; with n_bits given it is
    clamped to 1/(2 n_bits) and flagged, otherwise it is rejected.
    Returns (q_db, clamped).
    """
    if ber < 0 or ber > 1:
        raise ParameterError(f"ber must lie in [0, 1], got {ber}")
    clamped = False
    if ber == 0.0:
        if n_bits is None:
            raise ParameterError("ber=0 needs n_bits to clamp against")
        ber = 1.0 / (2.0 * n_bits)
        clamped = True
    arg = float(np.sqrt(2.0) * erfcinv(2.0 * ber))
    if arg <= 0:
        return float("-inf"), clamped
    return float(20.0 * np.log10(arg)), clamped


@dataclass(frozen=True)
class Metrics:
    ber: float
    q_db: float
    evm_db: float
    n_bits: int
    q_clamped: bool = False


def measure(
    rx_x: np.ndarray,
    rx_y: np.ndarray,
    frame: SymbolFrame,
    guard_symbols: int = 0,
) -> Metrics:
    """Data-aided quality measurement against the transmitted frame.

    A per-polarization least-squares complex gain is fitted before decisions,
    absorbing residual constant gain/phase from the equalizer chain. guard
    symbols at both ends are excluded from the statistics.
    """
    n = frame.n_symbols
    if rx_x.size != n or rx_y.size != n:
        raise ParameterError(f"expected {n} symbols per polarization")
    sl = slice(guard_symbols, n - guard_symbols if guard_symbols else None)
    if n - 2 * guard_symbols < 100:
        raise ParameterError("fewer than 100 symbols left after guards")
    total_err = 0
    total_bits = 0
    ev_num = 0.0
    ev_den = 0.0
    for rx, ref_sym, ref_bits in (
        (rx_x[sl], frame.symbols_x[sl], frame.bits_x[sl]),
        (rx_y[sl], frame.symbols_y[sl], frame.bits_y[sl]),
    ):
        g = np.vdot(ref_sym, rx) / np.vdot(ref_sym, ref_sym)
        if g == 0:
            raise ParameterError("received polarization is identically zero")
        eq = rx / g
        bits = qam16_demodulate(eq)
        total_err += int(np.sum(bits != ref_bits))
        total_bits += bits.size
        ev_num += float(np.sum(np.abs(eq - ref_sym) ** 2))
        ev_den += float(np.sum(np.abs(ref_sym) ** 2))
    ber = total_err / total_bits
    q_db, clamped = q_from_ber(ber, total_bits)
    # below -250 dB the residual is pure float roundoff from the gain fit
    if ev_num <= ev_den * 1e-25:
        evm_db = float("-inf")
    else:
        evm_db = 10.0 * np.log10(ev_num / ev_den)
    return Metrics(ber, q_db, evm_db, total_bits, clamped)

"""Dual-polarization sampled fields and basic waveform operations.

Conventions
-----------
* Field envelopes are complex baseband, in sqrt(W): |x|^2 is an instantaneous
  power in watts. dBm appears only at the CLI boundary.
* All rates in Hz, times in seconds. Fiber-facing parameters are converted to
  SI (m, s^2/m, 1/(W m)) before any math.
* FFT frequencies follow numpy's convention; the angular grid is
  omega = 2*pi*fftfreq(n, 1/sample_rate).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.signal

from .errors import NumericalError, ParameterError

C_LIGHT = 299792458.0  # m/s
H_PLANCK = 6.62607015e-34  # J s
DEFAULT_WAVELENGTH = 1550e-9  # m


def dbm_to_watt(p_dbm: float) -> float:
    return 1e-3 * 10.0 ** (p_dbm / 10.0)


def watt_to_dbm(p_w: float) -> float:
    if p_w <= 0:
        raise ParameterError(f"power must be positive to express in dBm, got {p_w}")
    return 10.0 * np.log10(p_w / 1e-3)


def d_to_beta2(d_ps_nm_km: float, wavelength_m: float = DEFAULT_WAVELENGTH) -> float:
    """Convert a dispersion parameter D to beta2.

    Parameters
    ----------
    d_ps_nm_km : float
        Dispersion in ps/(nm km). 17 ps/(nm km) at 1550 nm gives
        beta2 = -2.168e-26 s^2/m.
    wavelength_m : float
        Carrier wavelength in meters.

    Returns
    -------
    float
        beta2 = -D * lambda^2 / (2 pi c), in s^2/m.
    """
    if wavelength_m <= 0:
        raise ParameterError(f"wavelength must be positive, got {wavelength_m}")
    d_si = d_ps_nm_km * 1e-6  # ps/(nm km) -> s/m^2
    return -d_si * wavelength_m**2 / (2.0 * np.pi * C_LIGHT)


def alpha_db_km_to_np_m(alpha_db_km: float) -> float:
    """Power attenuation, dB/km -> nepers/m (field decays as exp(-alpha z / 2))."""
    return alpha_db_km * np.log(10.0) / 10.0 / 1e3


@dataclass(frozen=True)
class DualPolField:
    """A sampled dual-polarization complex envelope.

    Attributes
    ----------
    x, y : ndarray
        Complex128 sample vectors of equal length, sqrt(W).
    sample_rate : float
        Samples per second.
    center_offset : float
        Offset of this field's digital baseband center from the optical
        carrier, Hz. frequency_shift() updates it.
    """

    x: np.ndarray
    y: np.ndarray
    sample_rate: float
    center_offset: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.complex128)
        y = np.asarray(self.y, dtype=np.complex128)
        if x.ndim != 1 or y.ndim != 1:
            raise ParameterError("field samples must be 1-D vectors")
        if x.shape != y.shape:
            raise ParameterError(
                f"polarizations must have equal length, got {x.shape} vs {y.shape}"
            )
        if x.size == 0:
            raise ParameterError("field must contain at least one sample")
        if not self.sample_rate > 0:
            raise ParameterError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n_samples(self) -> int:
        return self.x.size

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def power(self) -> float:
        """Mean total power across both polarizations, W."""
        return float(np.mean(np.abs(self.x) ** 2 + np.abs(self.y) ** 2))

    def energy(self) -> float:
        return self.power() * self.duration

    def with_samples(self, x: np.ndarray, y: np.ndarray) -> "DualPolField":
        return DualPolField(x, y, self.sample_rate, self.center_offset)

    def scaled(self, amplitude: float) -> "DualPolField":
        return self.with_samples(self.x * amplitude, self.y * amplitude)

    def validate(self) -> "DualPolField":
        """Raise NumericalError if any sample is non-finite."""
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise NumericalError("field contains non-finite samples")
        return self


def time_axis(n: int, sample_rate: float) -> np.ndarray:
    return np.arange(n) / sample_rate


def omega_axis(n: int, sample_rate: float) -> np.ndarray:
    """Angular FFT frequencies, rad/s, in numpy FFT bin order."""
    return 2.0 * np.pi * np.fft.fftfreq(n, d=1.0 / sample_rate)


@dataclass(frozen=True)
class FirFilter:
    """Real or complex FIR taps with an integral group delay.

    group_delay is the number of samples the filter delays its input;
    apply_fir() compensates it so filtering is delay-free end to end.
    """

    taps: np.ndarray
    group_delay: int = dc_field(default=-1)

    def __post_init__(self):
        taps = np.asarray(self.taps)
        if taps.ndim != 1 or taps.size == 0:
            raise ParameterError("taps must be a non-empty 1-D vector")
        object.__setattr__(self, "taps", taps)
        gd = self.group_delay
        if gd < 0:
            gd = (taps.size - 1) // 2
        if gd >= taps.size:
            raise ParameterError(f"group_delay {gd} outside filter of {taps.size} taps")
        object.__setattr__(self, "group_delay", int(gd))

    def energy(self) -> float:
        return float(np.sum(np.abs(self.taps) ** 2))

    def frequency_response(self, n: int, sample_rate: float) -> np.ndarray:
        """Response on an n-bin FFT grid, group delay removed."""
        h = np.zeros(n, dtype=np.complex128)
        if self.taps.size > n:
            raise ParameterError("FFT grid shorter than the filter")
        h[: self.taps.size] = self.taps
        w = omega_axis(n, sample_rate)
        return np.fft.fft(h) * np.exp(1j * w * self.group_delay / sample_rate)


def rrc_taps(rolloff: float, sps: int, span_symbols: int = 64) -> np.ndarray:
    """Root-raised-cosine taps, unit energy, symmetric, span*sps + 1 long.

    Parameters
    ----------
    rolloff : float
        Excess-bandwidth factor in [0, 1].
    sps : int
        Samples per symbol.
    span_symbols : int
        Filter span in symbols; span*sps must be even so the filter has a
        center tap.
    """
    if not 0.0 <= rolloff <= 1.0:
        raise ParameterError(f"rolloff must lie in [0, 1], got {rolloff}")
    if sps < 1 or int(sps) != sps:
        raise ParameterError(f"sps must be a positive integer, got {sps}")
    if span_symbols < 1 or (span_symbols * sps) % 2 != 0:
        raise ParameterError("span_symbols*sps must be even and positive")
    n = span_symbols * sps + 1
    # symbol-normalized time, t = k/sps
    t = (np.arange(n) - (n - 1) / 2) / sps
    b = rolloff
    if b == 0.0:
        h = np.sinc(t)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            num = np.sin(np.pi * t * (1 - b)) + 4 * b * t * np.cos(np.pi * t * (1 + b))
            den = np.pi * t * (1 - (4 * b * t) ** 2)
            h = num / den
        # patch the removable singularities at t = 0 and |t| = 1/(4 rolloff)
        h[np.isclose(t, 0.0, rtol=0.0, atol=1e-9)] = 1.0 - b + 4 * b / np.pi
        lim = (b / np.sqrt(2)) * (
            (1 + 2 / np.pi) * np.sin(np.pi / (4 * b))
            + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
        )
        h[np.isclose(np.abs(t), 1.0 / (4.0 * b), rtol=0.0, atol=1e-9)] = lim
    h = h / np.sqrt(np.sum(h**2))
    return h


def apply_fir(fld: DualPolField, fir: FirFilter) -> DualPolField:
    """Filter both polarizations, zero-padded edges, output length preserved.

    The filter's group delay is compensated, so a symbol at sample k stays at
    sample k.
    """
    n = fld.n_samples
    gd = fir.group_delay
    if n * fir.taps.size > 4_000_000:
        conv = lambda v: scipy.signal.fftconvolve(v, fir.taps, mode="full")
    else:
        conv = lambda v: np.convolve(v, fir.taps, mode="full")
    xf = conv(fld.x)[gd : gd + n]
    yf = conv(fld.y)[gd : gd + n]
    return fld.with_samples(xf, yf)


def _resample_1d(v: np.ndarray, up: int, down: int) -> np.ndarray:
    n = v.size
    spec = np.fft.fft(v)
    if up > 1:
        m = n * up
        out = np.zeros(m, dtype=np.complex128)
        if n % 2 == 0:
            h = n // 2
            out[:h] = spec[:h]
            # split the Nyquist bin so the widened spectrum stays conjugate-consistent
            out[h] = 0.5 * spec[h]
            out[m - h] = 0.5 * spec[h]
            out[m - h + 1 :] = spec[h + 1 :]
        else:
            h = (n + 1) // 2  # non-negative bins
            out[:h] = spec[:h]
            out[m - (n - h) :] = spec[h:]
        spec, n = out, m
    if down > 1:
        m = n // down
        hp = (m + 1) // 2  # non-negative bins kept
        hn = m - hp  # negative bins kept
        out = np.empty(m, dtype=np.complex128)
        out[:hp] = spec[:hp]
        if hn:
            out[hp:] = spec[n - hn :]
        spec = out
    return np.fft.ifft(spec) * (up / down)


def resample(fld: DualPolField, up: int, down: int) -> DualPolField:
    """Band-limited rate conversion by integer factors (FFT method).

    Sample values at shared instants are preserved for in-band signals.
    down must divide n_samples * up.
    """
    for name, v in (("up", up), ("down", down)):
        if int(v) != v or v < 1:
            raise ParameterError(f"{name} must be a positive integer, got {v}")
    up, down = int(up), int(down)
    if up == down:
        return fld
    if (fld.n_samples * up) % down != 0:
        raise ParameterError(
            f"down={down} must divide n_samples*up = {fld.n_samples * up}"
        )
    x = _resample_1d(fld.x, up, down)
    y = _resample_1d(fld.y, up, down)
    return DualPolField(x, y, fld.sample_rate * up / down, fld.center_offset)


def frequency_shift(fld: DualPolField, delta_f: float) -> DualPolField:
    """Multiply by exp(+j 2 pi delta_f t); center_offset is increased by delta_f."""
    if abs(delta_f) >= fld.sample_rate / 2:
        raise ParameterError(
            f"shift {delta_f} Hz exceeds Nyquist ({fld.sample_rate / 2} Hz)"
        )
    ph = np.exp(2j * np.pi * delta_f * time_axis(fld.n_samples, fld.sample_rate))
    return DualPolField(
        fld.x * ph, fld.y * ph, fld.sample_rate, fld.center_offset + delta_f
    )

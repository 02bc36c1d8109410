"""Dispersion-managed link simulation.

The transmission model is a symmetric split-step solver for the coupled
propagation equations with loss, chromatic dispersion, Kerr nonlinearity and
coarse-step PMD. Per step of size dz:

    half linear -> nonlinear phase -> half linear

The linear factor per bin is exp(sign * dz * (-alpha/2 - 1j*beta2*omega^2/2))
with sign=+1 forward and sign=-1 backward, so a backward pass undoes the
matching forward pass exactly.

Two nonlinear flavors exist. The physical transmit model rotates each
polarization by its own power plus 2/3 of the other (cross-polarization
Kerr coupling); the polarization-averaged flavor rotates both by 8/9 of the
total power and is what equalizers assume. The mismatch is intentional.

Amplifiers add circular-Gaussian ASE with per-polarization PSD
S = n_sp * h * nu * (G - 1), n_sp = 10^(NF/10)/2.

PMD uses a fixed number of sections per fiber. Each section is a Haar-random
unitary rotation followed by a differential group delay +-dgd/2 on the
principal axes; section DGD vectors are drawn as isotropic 3-D Gaussians so
the fiber total is Maxwellian with mean pmd_coef*sqrt(L).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ParameterError
from .field import (
    C_LIGHT,
    DEFAULT_WAVELENGTH,
    H_PLANCK,
    DualPolField,
    alpha_db_km_to_np_m,
    d_to_beta2,
    omega_axis,
)


@dataclass(frozen=True)
class FiberParams:
    """Physical parameters of one fiber, in datasheet units."""

    length_km: float
    alpha_db_km: float
    dispersion_ps_nm_km: float
    gamma_w_km: float
    pmd_ps_sqrt_km: float = 0.0

    def __post_init__(self):
        if self.length_km <= 0:
            raise ParameterError(f"fiber length must be positive, got {self.length_km}")
        if self.alpha_db_km < 0 or self.gamma_w_km < 0 or self.pmd_ps_sqrt_km < 0:
            raise ParameterError("alpha, gamma and pmd coefficients must be >= 0")

    def effective_length_km(self) -> float:
        """(1 - exp(-alpha L)) / alpha; equals L for a lossless fiber."""
        a = self.alpha_db_km * np.log(10.0) / 10.0  # power nepers per km
        if a == 0.0:
            return self.length_km
        return (1.0 - np.exp(-a * self.length_km)) / a

    def d_total_ps_nm(self) -> float:
        return self.dispersion_ps_nm_km * self.length_km


SMF_72 = FiberParams(72.0, 0.2, 17.0, 1.4, 0.1)
DCF_13 = FiberParams(13.0, 0.5, -80.0, 2.8, 0.0)


@dataclass(frozen=True)
class SpanConfig:
    smf: FiberParams = SMF_72
    dcf: FiberParams = DCF_13
    gain_smf_db: float = 14.4
    gain_dcf_db: float = 6.5

    def fibers(self) -> tuple[FiberParams, FiberParams]:
        return (self.smf, self.dcf)

    def net_dispersion_ps_nm(self) -> float:
        return self.smf.d_total_ps_nm() + self.dcf.d_total_ps_nm()


@dataclass(frozen=True)
class DispersionMap:
    """Pre-compensation, spans, and a terminal trim element (ps/nm each).

    Pre-compensation and the terminal element are ideal lossless dispersive
    elements. accumulated(z) walks the physical fibers only, starting from the
    pre-compensation value at z=0.
    """

    precompensation_ps_nm: float
    spans: tuple[SpanConfig, ...]
    terminal_ps_nm: float

    def __post_init__(self):
        if len(self.spans) == 0:
            raise ParameterError("a link needs at least one span")
        object.__setattr__(self, "spans", tuple(self.spans))

    @classmethod
    def standard(
        cls,
        n_spans: int,
        precompensation_ps_nm: float = -1224.0,
        residual_rx_ps_nm: float = 0.0,
        span: SpanConfig | None = None,
    ) -> "DispersionMap":
        """Map with the terminal element chosen to hit a target RX residual."""
        span = span if span is not None else SpanConfig()
        net = n_spans * span.net_dispersion_ps_nm()
        terminal = residual_rx_ps_nm - precompensation_ps_nm - net
        return cls(precompensation_ps_nm, (span,) * n_spans, terminal)

    @property
    def n_spans(self) -> int:
        return len(self.spans)

    def length_km(self) -> float:
        return sum(s.smf.length_km + s.dcf.length_km for s in self.spans)

    def residual_at_rx_ps_nm(self) -> float:
        net = sum(s.net_dispersion_ps_nm() for s in self.spans)
        return self.precompensation_ps_nm + net + self.terminal_ps_nm

    def fiber_sequence(self) -> list[tuple[int, str, FiberParams, float]]:
        """(span index, kind, params, gain after the fiber in dB), TX to RX order."""
        seq = []
        for i, s in enumerate(self.spans):
            seq.append((i, "smf", s.smf, s.gain_smf_db))
            seq.append((i, "dcf", s.dcf, s.gain_dcf_db))
        return seq

    def accumulated(self, z_km: float) -> float:
        """Accumulated dispersion (ps/nm) after z km of fiber, incl. precomp."""
        if z_km < 0 or z_km > self.length_km() + 1e-9:
            raise ParameterError(f"z={z_km} km outside the link (0..{self.length_km()})")
        acc = self.precompensation_ps_nm
        rem = z_km
        for _, _, fib, _ in self.fiber_sequence():
            seg = min(rem, fib.length_km)
            acc += fib.dispersion_ps_nm_km * seg
            rem -= seg
            if rem <= 0:
                break
        return acc


# ---------------------------------------------------------------------------
# elementary propagation operators


def linear_step(
    fld: DualPolField,
    beta2_s2_m: float,
    alpha_np_m: float,
    dz_m: float,
    sign: str = "forward",
) -> DualPolField:
    """Loss + dispersion over dz, frequency domain.

    forward multiplies the spectrum by exp(dz*(-alpha/2 - 1j*beta2*w^2/2));
    backward multiplies by the reciprocal, so backward(forward(f)) == f.
    """
    if sign not in ("forward", "backward"):
        raise ParameterError(f"sign must be 'forward' or 'backward', got {sign!r}")
    w = omega_axis(fld.n_samples, fld.sample_rate)
    expo = dz_m * (-alpha_np_m / 2.0 - 0.5j * beta2_s2_m * w**2)
    if sign == "backward":
        expo = -expo
    h = np.exp(expo)
    x = np.fft.ifft(np.fft.fft(fld.x) * h)
    y = np.fft.ifft(np.fft.fft(fld.y) * h)
    return fld.with_samples(x, y)


def dispersion_response(
    n: int, sample_rate: float, d_l_ps_nm: float, wavelength_m: float = DEFAULT_WAVELENGTH
) -> np.ndarray:
    """Frequency response of a lossless element with D*L = d_l_ps_nm."""
    # aggregated beta2*L in s^2 from the lumped D*L value
    b2l = -(d_l_ps_nm * 1e-6 * 1e3) * wavelength_m**2 / (2.0 * np.pi * C_LIGHT)
    w = omega_axis(n, sample_rate)
    return np.exp(-0.5j * b2l * w**2)


def apply_dispersion(
    fld: DualPolField, d_l_ps_nm: float, wavelength_m: float = DEFAULT_WAVELENGTH
) -> DualPolField:
    """Ideal lossless lumped dispersion (pre-compensation / terminal trim)."""
    h = dispersion_response(fld.n_samples, fld.sample_rate, d_l_ps_nm, wavelength_m)
    return fld.with_samples(
        np.fft.ifft(np.fft.fft(fld.x) * h), np.fft.ifft(np.fft.fft(fld.y) * h)
    )


def nonlinear_step_cnlse(fld: DualPolField, gamma_w_m: float, dz_m: float) -> DualPolField:
    """Kerr rotation with 2/3 cross-polarization coupling (transmit model)."""
    px = np.abs(fld.x) ** 2
    py = np.abs(fld.y) ** 2
    g = gamma_w_m * dz_m
    x = fld.x * np.exp(1j * g * (px + (2.0 / 3.0) * py))
    y = fld.y * np.exp(1j * g * (py + (2.0 / 3.0) * px))
    return fld.with_samples(x, y)


def nonlinear_step_manakov(fld: DualPolField, gamma_w_m: float, dz_m: float) -> DualPolField:
    """Polarization-averaged Kerr rotation: 8/9 of total power on both."""
    p = np.abs(fld.x) ** 2 + np.abs(fld.y) ** 2
    rot = np.exp(1j * (8.0 / 9.0) * gamma_w_m * dz_m * p)
    return fld.with_samples(fld.x * rot, fld.y * rot)


_NL_STEPS = {
    "cnlse": nonlinear_step_cnlse,
    "manakov": nonlinear_step_manakov,
    "none": lambda fld, g, dz: fld,
}


# ---------------------------------------------------------------------------
# PMD


@dataclass(frozen=True)
class PmdSection:
    """One coarse-step PMD section: unitary rotation then +-dgd/2 delay."""

    dgd_s: float
    angles: tuple[float, float, float]

    def rotation(self) -> np.ndarray:
        """2x2 Jones rotation from ZYZ Euler angles."""
        phi, theta, psi = self.angles
        rz1 = np.array([[np.exp(-0.5j * phi), 0], [0, np.exp(0.5j * phi)]])
        ry = np.array(
            [
                [np.cos(theta / 2), -np.sin(theta / 2)],
                [np.sin(theta / 2), np.cos(theta / 2)],
            ],
            dtype=complex,
        )
        rz2 = np.array([[np.exp(-0.5j * psi), 0], [0, np.exp(0.5j * psi)]])
        return rz1 @ ry @ rz2


def draw_pmd_sections(
    fiber: FiberParams, n_sections: int, rng: np.random.Generator
) -> tuple[PmdSection, ...]:
    """Sample one fiber's PMD sections.

    Per-section DGD vectors are isotropic Gaussians sized so the full fiber's
    DGD is Maxwellian with mean pmd_coef * sqrt(L); rotations are Haar.
    """
    if n_sections < 1:
        raise ParameterError("n_sections must be >= 1")
    tau_mean = fiber.pmd_ps_sqrt_km * 1e-12 * np.sqrt(fiber.length_km)
    sigma_total = tau_mean * np.sqrt(np.pi / 8.0)
    sigma_sec = sigma_total / np.sqrt(n_sections)
    sections = []
    for _ in range(n_sections):
        vec = rng.normal(0.0, sigma_sec, size=3) if sigma_sec > 0 else np.zeros(3)
        dgd = float(np.linalg.norm(vec))
        phi = rng.uniform(0.0, 2.0 * np.pi)
        psi = rng.uniform(0.0, 2.0 * np.pi)
        theta = float(np.arccos(rng.uniform(-1.0, 1.0)))
        sections.append(PmdSection(dgd, (phi, theta, psi)))
    return tuple(sections)


@dataclass(frozen=True)
class PmdRealization:
    """Sections for every fiber, in link order (span0 smf, span0 dcf, ...)."""

    sections_per_fiber: tuple[tuple[PmdSection, ...], ...]

    @classmethod
    def draw(
        cls, dmap: DispersionMap, n_sections: int, rng: np.random.Generator
    ) -> "PmdRealization":
        per_fiber = tuple(
            draw_pmd_sections(fib, n_sections, rng)
            for _, _, fib, _ in dmap.fiber_sequence()
        )
        return cls(per_fiber)

    @classmethod
    def none(cls, dmap: DispersionMap) -> "PmdRealization":
        """Zero-DGD identity realization with one trivial section per fiber."""
        ident = (PmdSection(0.0, (0.0, 0.0, 0.0)),)
        return cls(tuple(ident for _ in dmap.fiber_sequence()))

    def mean_total_dgd_s(self) -> float:
        """Root-sum-square of section DGDs (proxy for the fiber aggregate)."""
        tot = 0.0
        for secs in self.sections_per_fiber:
            tot += sum(s.dgd_s**2 for s in secs)
        return float(np.sqrt(tot))

    def to_jsonable(self) -> dict:
        return {
            "fibers": [
                [{"dgd_s": s.dgd_s, "angles": list(s.angles)} for s in secs]
                for secs in self.sections_per_fiber
            ]
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "PmdRealization":
        fibers = tuple(
            tuple(PmdSection(s["dgd_s"], tuple(s["angles"])) for s in secs)
            for secs in obj["fibers"]
        )
        return cls(fibers)


def apply_pmd_section(
    fld: DualPolField, section: PmdSection, inverse: bool = False
) -> DualPolField:
    """Rotate into the section's axes and apply the differential delay.

    inverse=True applies the exact operator inverse (delay then rotation,
    both conjugated), for mirror equalization.
    """
    w = omega_axis(fld.n_samples, fld.sample_rate)
    r = section.rotation()
    dly_x = np.exp(-0.5j * w * section.dgd_s)
    sx = np.fft.fft(fld.x)
    sy = np.fft.fft(fld.y)
    if not inverse:
        sx, sy = r[0, 0] * sx + r[0, 1] * sy, r[1, 0] * sx + r[1, 1] * sy
        sx = sx * dly_x
        sy = sy * np.conj(dly_x)
    else:
        sx = sx * np.conj(dly_x)
        sy = sy * dly_x
        rh = r.conj().T
        sx, sy = rh[0, 0] * sx + rh[0, 1] * sy, rh[1, 0] * sx + rh[1, 1] * sy
    return fld.with_samples(np.fft.ifft(sx), np.fft.ifft(sy))


# ---------------------------------------------------------------------------
# amplification


def edfa(
    fld: DualPolField,
    gain_db: float,
    noise_figure_db: float | None,
    rng: np.random.Generator | None = None,
    carrier_freq_hz: float = C_LIGHT / DEFAULT_WAVELENGTH,
) -> DualPolField:
    """Flat-gain amplifier with ASE.

    noise_figure_db=None gives a noiseless amplifier. ASE is circular Gaussian
    per polarization with PSD n_sp*h*nu*(G-1) over the simulated bandwidth.
    """
    g_lin = 10.0 ** (gain_db / 10.0)
    out = fld.scaled(np.sqrt(g_lin))
    if noise_figure_db is None:
        return out
    if rng is None:
        raise ParameterError("an rng is required when the amplifier adds noise")
    if g_lin <= 1.0:
        return out
    n_sp = 10.0 ** (noise_figure_db / 10.0) / 2.0
    psd = n_sp * H_PLANCK * carrier_freq_hz * (g_lin - 1.0)  # W/Hz per pol
    sigma = np.sqrt(psd * fld.sample_rate / 2.0)  # per quadrature
    n = fld.n_samples
    nx = sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    ny = sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return out.with_samples(out.x + nx, out.y + ny)


# ---------------------------------------------------------------------------
# fiber and link propagation


@dataclass(frozen=True)
class SsfmConfig:
    steps_smf: int = 72
    steps_dcf: int = 13
    nonlinearity: str = "cnlse"  # cnlse | manakov | none
    max_phase_rad: float | None = None

    def __post_init__(self):
        if self.steps_smf < 1 or self.steps_dcf < 1:
            raise ParameterError("step counts must be >= 1")
        if self.nonlinearity not in _NL_STEPS:
            raise ParameterError(f"unknown nonlinearity {self.nonlinearity!r}")

    def steps_for(self, kind: str) -> int:
        return self.steps_smf if kind == "smf" else self.steps_dcf


def propagate_fiber(
    fld: DualPolField,
    fiber: FiberParams,
    n_steps: int,
    nonlinearity: str = "cnlse",
    pmd_sections: tuple[PmdSection, ...] = (),
    max_phase_rad: float | None = None,
    wavelength_m: float = DEFAULT_WAVELENGTH,
) -> DualPolField:
    """Symmetric SSFM through one fiber, PMD sections interleaved.

    Section k is applied at the start of the k-th of len(pmd_sections) equal
    sub-lengths; step counts that are a multiple of the section count land the
    sections exactly on step boundaries.
    """
    nl = _NL_STEPS[nonlinearity]
    beta2 = d_to_beta2(fiber.dispersion_ps_nm_km, wavelength_m)
    alpha = alpha_db_km_to_np_m(fiber.alpha_db_km)
    gamma = fiber.gamma_w_km * 1e-3  # 1/(W km) -> 1/(W m)
    dz = fiber.length_km * 1e3 / n_steps
    n_sec = len(pmd_sections)
    if max_phase_rad is not None and nonlinearity != "none":
        peak = np.max(np.abs(fld.x) ** 2 + np.abs(fld.y) ** 2)
        if gamma * peak * dz > max_phase_rad:
            raise ConfigError(
                f"nonlinear phase per step {gamma * peak * dz:.3e} rad exceeds "
                f"the configured bound {max_phase_rad} rad; increase step count"
            )
    next_section = 0
    for k in range(n_steps):
        if n_sec and next_section < n_sec and k == (next_section * n_steps) // n_sec:
            fld = apply_pmd_section(fld, pmd_sections[next_section])
            next_section += 1
        fld = linear_step(fld, beta2, alpha, dz / 2.0, "forward")
        fld = nl(fld, gamma, dz)
        fld = linear_step(fld, beta2, alpha, dz / 2.0, "forward")
    return fld


def propagate_link(
    fld: DualPolField,
    dmap: DispersionMap,
    ssfm: SsfmConfig,
    rng: np.random.Generator | None,
    noise_figure_db: float | None = 5.0,
    pmd: PmdRealization | None = None,
    n_pmd_sections: int = 8,
    wavelength_m: float = DEFAULT_WAVELENGTH,
) -> tuple[DualPolField, PmdRealization]:
    """Full link: precomp, spans with inline amplifiers, terminal trim.

    Draws a PmdRealization from rng when one is not supplied; returns it with
    the propagated field so a genie equalizer can invert it.
    """
    if pmd is None:
        if rng is None:
            raise ParameterError("propagate_link needs an rng to draw PMD")
        pmd = PmdRealization.draw(dmap, n_pmd_sections, rng)
    seq = dmap.fiber_sequence()
    if len(pmd.sections_per_fiber) != len(seq):
        raise ParameterError(
            f"PMD realization covers {len(pmd.sections_per_fiber)} fibers, "
            f"link has {len(seq)}"
        )
    fld = apply_dispersion(fld, dmap.precompensation_ps_nm, wavelength_m)
    for idx, (_, kind, fiber, gain_db) in enumerate(seq):
        fld = propagate_fiber(
            fld,
            fiber,
            ssfm.steps_for(kind),
            ssfm.nonlinearity,
            pmd.sections_per_fiber[idx],
            ssfm.max_phase_rad,
            wavelength_m,
        )
        fld = edfa(fld, gain_db, noise_figure_db, rng, C_LIGHT / wavelength_m)
    fld = apply_dispersion(fld, dmap.terminal_ps_nm, wavelength_m)
    return fld, pmd


def save_pmd(pmd: PmdRealization, path) -> None:
    with open(path, "w") as fh:
        json.dump(pmd.to_jsonable(), fh, indent=1, sort_keys=True)


def load_pmd(path) -> PmdRealization:
    with open(path) as fh:
        return PmdRealization.from_jsonable(json.load(fh))

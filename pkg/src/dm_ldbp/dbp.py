"""Digital back-propagation adapted to dispersion-managed links.

A plan partitions the link map into M contiguous segments (span granularity,
or fiber granularity when M exceeds the span count). Each step carries one
merged inverse linear response for its segment and one lumped Manakov
de-rotation sized by the segment's averaged nonlinear coefficient and summed
effective length. The terminal trim's inverse is merged into the first step's
response and the pre-compensation inverse into the trailing boundary response,
so the product of all responses inverts the whole linear map.

Conventions
-----------
* Fields entering dbp_equalize are in the normalized power domain: mean total
  power 1 over the processing window of a run. The plan's launch power (per
  channel, watts) converts normalized instantaneous power back to watts inside
  the nonlinear phase.
* steps run receiver-to-transmitter; linear responses have unit magnitude
  (amplifiers offset loss exactly in the schedule; deviations are tracked by
  power_scale, not by response magnitude).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .field import (
    DEFAULT_WAVELENGTH,
    DualPolField,
    alpha_db_km_to_np_m,
    d_to_beta2,
    dbm_to_watt,
)
from .link import (
    _NL_STEPS,
    DispersionMap,
    FiberParams,
    PmdRealization,
    SsfmConfig,
    apply_dispersion,
    apply_pmd_section,
    dispersion_response,
    linear_step,
)


@dataclass(frozen=True, eq=False)
class DbpStep:
    """One back-propagation step: merged linear response plus lumped Kerr stage."""

    linear_response: np.ndarray  # complex, one factor per FFT bin
    gamma_eff: float  # 1/(W km), averaged over the segment's fibers
    nonlinear_length: float  # km, sum of the segment's effective lengths
    power_scale: float  # signal power at segment entry relative to launch
    label: str = ""

    def __post_init__(self):
        if self.nonlinear_length <= 0:
            raise ParameterError("nonlinear_length must be positive")


@dataclass(frozen=True, eq=False)
class DbpPlan:
    """Receiver-to-transmitter step list plus the trailing boundary response."""

    steps: tuple[DbpStep, ...]
    final_response: np.ndarray
    m_steps: int
    n_fft: int
    sample_rate: float
    launch_power_dbm: float
    symmetric: bool
    wavelength_m: float
    fibers: tuple[tuple[str, FiberParams], ...]  # (kind, params), TX order
    precompensation_ps_nm: float
    terminal_ps_nm: float

    @property
    def launch_power_w(self) -> float:
        return dbm_to_watt(self.launch_power_dbm)

    @property
    def n_convolutions(self) -> int:
        return self.m_steps + 1


def _segment_groups(dmap: DispersionMap, m_steps: int):
    """Contiguous fiber-index groups and labels for the M segments (TX order)."""
    n_spans = dmap.n_spans
    seq = dmap.fiber_sequence()
    if m_steps < 1:
        raise ParameterError(f"m_steps must be >= 1, got {m_steps}")
    if m_steps <= n_spans:
        bounds = [(i * n_spans) // m_steps for i in range(m_steps + 1)]
        groups = [list(range(2 * a, 2 * b)) for a, b in zip(bounds, bounds[1:])]
        labels = [
            f"span {a + 1}" if b - a == 1 else f"spans {a + 1}-{b}"
            for a, b in zip(bounds, bounds[1:])
        ]
    elif m_steps <= 2 * n_spans:
        bounds = [(i * len(seq)) // m_steps for i in range(m_steps + 1)]
        groups = [list(range(a, b)) for a, b in zip(bounds, bounds[1:])]
        labels = []
        for a, b in zip(bounds, bounds[1:]):
            if b - a == 1:
                span_idx, kind, _, _ = seq[a]
                labels.append(f"span {span_idx + 1} {kind}")
            else:
                labels.append(f"fibers {a + 1}-{b}")
    else:
        raise ParameterError(
            f"m_steps={m_steps} exceeds the per-fiber granularity of "
            f"{2 * n_spans} for a {n_spans}-span link"
        )
    return seq, groups, labels


def build_dbp_plan(
    dmap: DispersionMap,
    m_steps: int,
    launch_power_dbm: float,
    sample_rate: float,
    n_fft: int,
    *,
    symmetric: bool = True,
    power_weighted: bool = False,
    wavelength_m: float = DEFAULT_WAVELENGTH,
) -> DbpPlan:
    """Partition the map into M segments and realize the step responses.

    Segments of equal span count when M <= spans (uneven M gives sizes
    differing by at most one, boundaries at floor(i*spans/M)); fiber
    granularity up to M = 2*spans. symmetric=True places the Kerr stage
    between half-segment responses; symmetric=False applies each segment's
    full response before its Kerr stage. power_weighted=True switches
    gamma_eff to the effective-length-and-power weighted average.
    """
    if n_fft < 2:
        raise ParameterError(f"n_fft must be >= 2, got {n_fft}")
    seq, groups, labels = _segment_groups(dmap, m_steps)

    # power at each fiber's entry relative to launch, from the gain schedule
    entry = []
    scale = 1.0
    for _, _, fib, gain_db in seq:
        entry.append(scale)
        scale *= 10.0 ** ((gain_db - fib.alpha_db_km * fib.length_km) / 10.0)

    segments = []  # (d_ps_nm, gamma_eff, nonlinear_length, power_scale, label)
    for group, label in zip(groups, labels):
        fibers = [seq[i][2] for i in group]
        d_seg = sum(f.d_total_ps_nm() for f in fibers)
        if len(fibers) == 1:
            gamma = fibers[0].gamma_w_km
        elif power_weighted:
            weights = [seq_f.effective_length_km() * entry[i] for i, seq_f in zip(group, fibers)]
            gamma = sum(f.gamma_w_km * w for f, w in zip(fibers, weights)) / sum(weights)
        else:
            gamma = sum(f.gamma_w_km * f.length_km for f in fibers) / sum(
                f.length_km for f in fibers
            )
        nl_len = sum(f.effective_length_km() for f in fibers)
        segments.append((d_seg, gamma, nl_len, entry[group[0]], label))

    def inverse_of(d_ps_nm: float) -> np.ndarray:
        return dispersion_response(n_fft, sample_rate, -d_ps_nm, wavelength_m)

    steps = []
    if symmetric:
        halves = [inverse_of(d / 2.0) for d, *_ in segments]
        for i in range(m_steps):
            s = m_steps - 1 - i
            if i == 0:
                resp = inverse_of(dmap.terminal_ps_nm) * halves[s]
            else:
                resp = halves[s + 1] * halves[s]
            _, gamma, nl_len, ps, label = segments[s]
            steps.append(DbpStep(resp, gamma, nl_len, ps, label))
        final = halves[0] * inverse_of(dmap.precompensation_ps_nm)
    else:
        for i in range(m_steps):
            s = m_steps - 1 - i
            d_seg, gamma, nl_len, ps, label = segments[s]
            resp = inverse_of(d_seg)
            if i == 0:
                resp = inverse_of(dmap.terminal_ps_nm) * resp
            steps.append(DbpStep(resp, gamma, nl_len, ps, label))
        final = inverse_of(dmap.precompensation_ps_nm)

    return DbpPlan(
        steps=tuple(steps),
        final_response=final,
        m_steps=m_steps,
        n_fft=int(n_fft),
        sample_rate=float(sample_rate),
        launch_power_dbm=float(launch_power_dbm),
        symmetric=symmetric,
        wavelength_m=wavelength_m,
        fibers=tuple((kind, fib) for _, kind, fib, _ in seq),
        precompensation_ps_nm=dmap.precompensation_ps_nm,
        terminal_ps_nm=dmap.terminal_ps_nm,
    )


def _check_geometry(fld: DualPolField, plan: DbpPlan) -> None:
    if fld.n_samples != plan.n_fft:
        raise ParameterError(
            f"field has {fld.n_samples} samples but the plan was built for "
            f"{plan.n_fft}"
        )
    if abs(fld.sample_rate - plan.sample_rate) > 1e-6 * plan.sample_rate:
        raise ParameterError(
            f"field sample rate {fld.sample_rate} does not match the plan's "
            f"{plan.sample_rate}"
        )


def dbp_equalize(fld: DualPolField, plan: DbpPlan) -> DualPolField:
    """Run the plan on a normalized-power field (circular over the window)."""
    _check_geometry(fld, plan)
    x = np.fft.fft(fld.x)
    y = np.fft.fft(fld.y)
    p_launch = plan.launch_power_w
    for step in plan.steps:
        x = x * step.linear_response
        y = y * step.linear_response
        coeff = (
            (8.0 / 9.0)
            * step.gamma_eff
            * step.nonlinear_length
            * step.power_scale
            * p_launch
        )
        if coeff != 0.0:
            xt = np.fft.ifft(x)
            yt = np.fft.ifft(y)
            rot = np.exp(-1j * coeff * (np.abs(xt) ** 2 + np.abs(yt) ** 2))
            x = np.fft.fft(xt * rot)
            y = np.fft.fft(yt * rot)
    x = x * plan.final_response
    y = y * plan.final_response
    return fld.with_samples(np.fft.ifft(x), np.fft.ifft(y))


def _section_schedule(n_steps: int, n_sections: int) -> dict[int, int]:
    """Substep index -> section index, replicating the forward insertion rule."""
    sched: dict[int, int] = {}
    nxt = 0
    for k in range(n_steps):
        if n_sections and nxt < n_sections and k == (nxt * n_steps) // n_sections:
            sched[k] = nxt
            nxt += 1
    return sched


def mirror_backpropagate(
    fld: DualPolField,
    dmap: DispersionMap,
    ssfm: SsfmConfig,
    pmd: PmdRealization | None = None,
    wavelength_m: float = DEFAULT_WAVELENGTH,
) -> DualPolField:
    """Exact operator inverse of the noiseless forward propagation.

    Walks every fiber's split steps in reverse with negated nonlinearity,
    reciprocal linear factors, inverse amplifier gains and inverse PMD
    sections at the positions the forward pass used. This is the
    per-fiber-step mirror, not the lumped plan executor.
    """
    seq = dmap.fiber_sequence()
    if pmd is not None and len(pmd.sections_per_fiber) != len(seq):
        raise ParameterError(
            f"PMD realization covers {len(pmd.sections_per_fiber)} fibers, "
            f"link has {len(seq)}"
        )
    nl = _NL_STEPS[ssfm.nonlinearity]
    out = apply_dispersion(fld, -dmap.terminal_ps_nm, wavelength_m)
    for idx in range(len(seq) - 1, -1, -1):
        _, kind, fib, gain_db = seq[idx]
        out = out.scaled(10.0 ** (-gain_db / 20.0))
        sections = pmd.sections_per_fiber[idx] if pmd is not None else ()
        n_steps = ssfm.steps_for(kind)
        beta2 = d_to_beta2(fib.dispersion_ps_nm_km, wavelength_m)
        alpha = alpha_db_km_to_np_m(fib.alpha_db_km)
        gamma = fib.gamma_w_km * 1e-3
        dz = fib.length_km * 1e3 / n_steps
        sched = _section_schedule(n_steps, len(sections))
        for k in range(n_steps - 1, -1, -1):
            out = linear_step(out, beta2, alpha, dz / 2.0, "backward")
            out = nl(out, -gamma, dz)
            out = linear_step(out, beta2, alpha, dz / 2.0, "backward")
            j = sched.get(k)
            if j is not None:
                out = apply_pmd_section(out, sections[j], inverse=True)
    return apply_dispersion(out, -dmap.precompensation_ps_nm, wavelength_m)


def pmd_aware_dbp(
    fld: DualPolField,
    plan: DbpPlan,
    pmd: PmdRealization,
    ssfm: SsfmConfig | None = None,
) -> DualPolField:
    """Genie equalizer: peel the known PMD off, then run the plain plan.

    The peel walks the link receiver-to-transmitter and, inside each fiber,
    interleaves inverse PMD sections with inverse dispersion chunks at the
    sections' true positions, then restores the fiber's lumped dispersion.
    The result is the field of an equivalent PMD-free link, which dbp_equalize
    then back-propagates. Pass the forward SsfmConfig to reproduce the
    step-quantized section positions exactly; without it, sections are assumed
    at the ideal equal-subdivision positions (identical when the step count is
    a multiple of the section count).
    """
    if len(pmd.sections_per_fiber) != len(plan.fibers):
        raise ParameterError(
            f"PMD realization covers {len(pmd.sections_per_fiber)} fibers, "
            f"plan has {len(plan.fibers)}"
        )
    out = fld
    for idx in range(len(plan.fibers) - 1, -1, -1):
        kind, fib = plan.fibers[idx]
        sections = pmd.sections_per_fiber[idx]
        n_sec = len(sections)
        if n_sec == 0:
            continue
        if ssfm is not None:
            n_steps = ssfm.steps_for(kind)
            dz_km = fib.length_km / n_steps
            sched = _section_schedule(n_steps, n_sec)
            ks = sorted(sched)
            positions = [k * dz_km for k in ks]
            applied = [sections[sched[k]] for k in ks]
        else:
            positions = [j * fib.length_km / n_sec for j in range(n_sec)]
            applied = list(sections)
        z_hi = fib.length_km
        for z, sec in zip(reversed(positions), reversed(applied)):
            if z_hi > z:
                out = apply_dispersion(
                    out, -fib.dispersion_ps_nm_km * (z_hi - z), plan.wavelength_m
                )
            out = apply_pmd_section(out, sec, inverse=True)
            z_hi = z
        if z_hi > 0:
            out = apply_dispersion(
                out, -fib.dispersion_ps_nm_km * z_hi, plan.wavelength_m
            )
        out = apply_dispersion(out, fib.d_total_ps_nm(), plan.wavelength_m)
    return dbp_equalize(out, plan)


def export_plan(plan: DbpPlan, path) -> None:
    """Write a human-readable description of the plan's steps."""
    lines = [
        "dm-ldbp back-propagation plan",
        f"mode: {'symmetric' if plan.symmetric else 'first-order'}",
        f"steps: {plan.m_steps}",
        f"convolutions: {plan.n_convolutions}",
        f"n_fft: {plan.n_fft}",
        f"sample_rate_hz: {plan.sample_rate!r}",
        f"launch_power_dbm: {plan.launch_power_dbm!r}",
        f"precompensation_ps_nm: {plan.precompensation_ps_nm!r}",
        f"terminal_ps_nm: {plan.terminal_ps_nm!r}",
    ]
    for i, s in enumerate(plan.steps):
        lines.append(
            f"step {i} [{s.label}]: gamma_eff={s.gamma_eff:.6f} 1/(W km) "
            f"nonlinear_length={s.nonlinear_length:.6f} km "
            f"power_scale={s.power_scale:.6g} "
            f"response_bins={s.linear_response.size}"
        )
    lines.append(f"final [boundary]: response_bins={plan.final_response.size}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")

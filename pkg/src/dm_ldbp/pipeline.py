"""Experiment orchestration: seeded runs, receiver chain, datasets, equalizer arms.

A *run* is one independently seeded transmission: fresh bits for every WDM
channel, fresh amplifier noise, one shared polarization-mode-dispersion
realization per experiment. Runs are grouped into named splits (train_run /
val_run / test_run) whose random streams never overlap, while the fiber
realization is common to all of them -- the situation a receiver trained on
recorded data actually faces.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .dbp import DbpPlan, build_dbp_plan, dbp_equalize, pmd_aware_dbp
from .errors import AdaptationError, ParameterError, SyncError
from .field import DualPolField, resample
from .ldbp import LdbpModel, ldbp_forward
from .link import (
    DispersionMap,
    PmdRealization,
    SpanConfig,
    SsfmConfig,
    propagate_link,
)
from .rng import rng_for
from .rxdsp import (
    Mimo2x2,
    MimoConfig,
    cd_compensate,
    channel_select,
    mimo_apply,
    mimo_train,
    synchronize,
)
from .training import Dataset
from .transceiver import (
    SymbolFrame,
    WdmConfig,
    build_wdm,
    measure,
    q_from_ber,
    shape_channel,
)

logger = logging.getLogger(__name__)

RX_SPS = 2


@dataclass(frozen=True)
class LinkConfig:
    """Link-level knobs layered over the standard dispersion-managed span.

    noise_figure_db=None turns the amplifiers noiseless; pmd_coef_ps_sqrt_km=0
    pins the polarization channel to the identity so repeated experiments see
    a strictly scalar link.
    """

    n_spans: int = 28
    precompensation_ps_nm: float = -1224.0
    residual_rx_ps_nm: float = 0.0
    noise_figure_db: float | None = 5.0
    pmd_coef_ps_sqrt_km: float = 0.1
    n_pmd_sections: int = 8
    span: SpanConfig | None = None

    def __post_init__(self):
        if self.n_spans < 1:
            raise ParameterError(f"n_spans must be >= 1, got {self.n_spans}")
        if self.pmd_coef_ps_sqrt_km < 0:
            raise ParameterError(
                f"pmd coefficient must be >= 0, got {self.pmd_coef_ps_sqrt_km}"
            )
        if self.n_pmd_sections < 1:
            raise ParameterError(
                f"n_pmd_sections must be >= 1, got {self.n_pmd_sections}"
            )

    def dispersion_map(self) -> DispersionMap:
        base = self.span if self.span is not None else SpanConfig()
        span = replace(
            base, smf=replace(base.smf, pmd_ps_sqrt_km=self.pmd_coef_ps_sqrt_km)
        )
        return DispersionMap.standard(
            self.n_spans,
            self.precompensation_ps_nm,
            self.residual_rx_ps_nm,
            span,
        )


@dataclass(frozen=True)
class RunSpec:
    """Everything one seeded transmission needs, minus the run index."""

    link: LinkConfig
    wdm: WdmConfig
    ssfm: SsfmConfig
    n_symbols: int
    master_seed: int

    def __post_init__(self):
        if self.n_symbols < 256:
            raise ParameterError(
                f"n_symbols must be >= 256 for a usable run, got {self.n_symbols}"
            )
        if self.wdm.sps % RX_SPS:
            raise ParameterError(
                f"waveform oversampling {self.wdm.sps} must be a multiple of "
                f"the receiver's {RX_SPS} samples/symbol"
            )

    @property
    def rx_sample_rate(self) -> float:
        return RX_SPS * self.wdm.baud

    @property
    def rx_samples(self) -> int:
        return RX_SPS * self.n_symbols


def pmd_for(spec: RunSpec) -> PmdRealization:
    """The experiment's single fiber realization, drawn once from the master seed."""
    dmap = spec.link.dispersion_map()
    if spec.link.pmd_coef_ps_sqrt_km == 0.0:
        return PmdRealization.none(dmap)
    rng = rng_for(spec.master_seed, "pmd", 0)
    return PmdRealization.draw(dmap, spec.link.n_pmd_sections, rng)


def simulate_run(
    spec: RunSpec,
    run_index: int,
    purpose: str,
    pmd: PmdRealization,
) -> tuple[DualPolField, list[SymbolFrame]]:
    """Transmit one run through the link; returns the oversampled RX field.

    One generator, keyed by (master_seed, purpose, run_index), supplies first
    the channel bits and then the amplifier noise, so splits are disjoint by
    construction and every run is exactly reproducible.
    """
    rng = rng_for(spec.master_seed, purpose, run_index)
    frames = [
        SymbolFrame.random(spec.n_symbols, spec.wdm.baud, rng)
        for _ in range(spec.wdm.n_channels)
    ]
    tx = build_wdm(frames, spec.wdm)
    rx, _ = propagate_link(
        tx,
        spec.link.dispersion_map(),
        spec.ssfm,
        rng,
        noise_figure_db=spec.link.noise_figure_db,
        pmd=pmd,
        n_pmd_sections=spec.link.n_pmd_sections,
    )
    return rx, frames


def receiver_front_end(
    rx: DualPolField,
    frame: SymbolFrame,
    spec: RunSpec,
    use_mimo: bool = True,
    mimo_cfg: MimoConfig | None = None,
) -> DualPolField:
    """Select the wanted channel and bring it to a normalized 2 samples/symbol.

    Matched filter, integer decimation, timing recovery against the known
    frame, optionally a data-aided 2x2 butterfly, then scaling to unit mean
    total power -- the convention every equalizer stage downstream assumes.
    Raises SyncError / AdaptationError when the run is unusable.
    """
    wdm = spec.wdm
    offset = float(wdm.channel_offsets_hz()[wdm.center_index])
    sel = channel_select(rx, offset, wdm.baud, wdm.rolloff, wdm.rrc_span)
    down = wdm.sps // RX_SPS
    two = resample(sel, 1, down) if down > 1 else sel
    synced, _ = synchronize(two, frame.symbols_x, frame.symbols_y, sps=RX_SPS)
    if use_mimo:
        # unit power per polarization so the data-aided taps start scale-matched
        work = synced.scaled(np.sqrt(2.0 / synced.power()))
        cfg = mimo_cfg or MimoConfig(step_size=5e-3, passes=3)
        eq = Mimo2x2.identity(cfg.n_taps)
        eq, _ = mimo_train(
            eq, work, frame.symbols_x, frame.symbols_y, cfg, sps=RX_SPS
        )
        synced = mimo_apply(eq, work)
    return synced.scaled(1.0 / np.sqrt(synced.power()))


def clean_reference(frame: SymbolFrame, wdm: WdmConfig) -> DualPolField:
    """The frame as the receiver would see it over a perfect link.

    The transmitted single channel pushed through the receiver's own matched
    filter and decimation, normalized to unit power: the training target that
    asks the equalizer to undo the channel but not the (known) pulse shaping.
    """
    ch = shape_channel(frame, wdm)
    sel = channel_select(ch, 0.0, wdm.baud, wdm.rolloff, wdm.rrc_span)
    down = wdm.sps // RX_SPS
    two = resample(sel, 1, down) if down > 1 else sel
    return two.scaled(1.0 / np.sqrt(two.power()))


# ---------------------------------------------------------------------------
# model application over full runs


def ldbp_equalize_run(model: LdbpModel, fld: DualPolField) -> DualPolField:
    """Tile a run into overlapping model windows and stitch the crops back.

    Window i starts margin samples before output block i so the stitched
    output blocks [i*output_len, (i+1)*output_len) cover the run exactly; the
    run is treated as circular, matching the training windows' interior-only
    targets. The run length must be a multiple of the model's output length.
    """
    n = fld.n_samples
    out_len = model.output_len
    if n % out_len:
        raise ParameterError(
            f"run length {n} is not a multiple of the model output {out_len}; "
            "choose n_symbols accordingly"
        )
    if abs(fld.sample_rate - model.sample_rate) > 1e-6 * model.sample_rate:
        raise ParameterError(
            f"field sample rate {fld.sample_rate} does not match the model's "
            f"{model.sample_rate}"
        )
    margin = (model.input_len - out_len) // 2
    n_tiles = n // out_len
    starts = (np.arange(n_tiles) * out_len - margin) % n
    idx = (starts[:, None] + np.arange(model.input_len)[None, :]) % n
    out_x, out_y, _ = ldbp_forward(model, fld.x[idx], fld.y[idx])
    return fld.with_samples(out_x.reshape(-1), out_y.reshape(-1))


# ---------------------------------------------------------------------------
# equalizer arms and evaluation


@dataclass(frozen=True)
class Arm:
    """One equalizer under test: linear | dbp | ldbp | pmd_aware_dbp."""

    kind: str
    m_steps: int | None = None
    model: LdbpModel | None = None
    label: str | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "dbp", "ldbp", "pmd_aware_dbp"):
            raise ParameterError(f"unknown equalizer kind {self.kind!r}")
        if self.kind in ("dbp", "pmd_aware_dbp"):
            if self.m_steps is None or self.m_steps < 1:
                raise ParameterError(f"{self.kind} needs m_steps >= 1")
        if self.kind == "ldbp" and self.model is None:
            raise ParameterError("ldbp arm needs a model")

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind in ("dbp", "pmd_aware_dbp"):
            return f"{self.kind}{self.m_steps}"
        return self.kind


@dataclass(frozen=True)
class ArmResult:
    """Error counts pooled over all evaluated runs of one arm."""

    name: str
    ber: float
    q_db: float
    q_clamped: bool
    n_bits: int
    per_run_ber: tuple[float, ...]
    per_run_q_db: tuple[float, ...]


def _arm_plans(
    arms: list[Arm],
    dmap: DispersionMap,
    spec: RunSpec,
    symmetric: bool,
    power_weighted: bool,
) -> dict[str, DbpPlan]:
    plans: dict[str, DbpPlan] = {}
    for arm in arms:
        if arm.kind in ("dbp", "pmd_aware_dbp"):
            plans[arm.name] = build_dbp_plan(
                dmap,
                arm.m_steps,
                spec.wdm.launch_power_dbm,
                spec.rx_sample_rate,
                spec.rx_samples,
                symmetric=symmetric,
                power_weighted=power_weighted,
            )
    return plans


def evaluate_cell(
    spec: RunSpec,
    arms: list[Arm],
    n_runs: int,
    purpose: str = "test_run",
    guard_symbols: int = 128,
    use_mimo: bool = True,
    mimo_cfg: MimoConfig | None = None,
    symmetric: bool = True,
    power_weighted: bool = False,
) -> dict[str, ArmResult]:
    """Run every arm over the same n_runs transmissions and pool the errors.

    All arms except the genie share one receiver front end per run; the genie
    (pmd_aware_dbp) bypasses the butterfly because it inverts the recorded
    fiber realization itself. Guard symbols at the run edges are excluded
    from the error counts.
    """
    if n_runs < 1:
        raise ParameterError(f"n_runs must be >= 1, got {n_runs}")
    names = [arm.name for arm in arms]
    if len(set(names)) != len(names):
        raise ParameterError(f"arm names must be unique, got {names}")
    dmap = spec.link.dispersion_map()
    pmd = pmd_for(spec)
    plans = _arm_plans(arms, dmap, spec, symmetric, power_weighted)
    residual = dmap.residual_at_rx_ps_nm()
    needs_front = any(a.kind != "pmd_aware_dbp" for a in arms)
    needs_raw = any(a.kind == "pmd_aware_dbp" for a in arms)

    errors = {n: 0 for n in names}
    bits = {n: 0 for n in names}
    per_ber: dict[str, list[float]] = {n: [] for n in names}
    per_q: dict[str, list[float]] = {n: [] for n in names}
    for run in range(n_runs):
        rx, frames = simulate_run(spec, run, purpose, pmd)
        frame = frames[spec.wdm.center_index]
        front = (
            receiver_front_end(rx, frame, spec, use_mimo=use_mimo, mimo_cfg=mimo_cfg)
            if needs_front
            else None
        )
        raw = (
            receiver_front_end(rx, frame, spec, use_mimo=False)
            if needs_raw
            else None
        )
        for arm in arms:
            if arm.kind == "linear":
                eq = cd_compensate(front, residual)
            elif arm.kind == "dbp":
                eq = dbp_equalize(front, plans[arm.name])
            elif arm.kind == "ldbp":
                eq = ldbp_equalize_run(arm.model, front)
            else:
                eq = pmd_aware_dbp(raw, plans[arm.name], pmd, spec.ssfm)
            m = measure(eq.x[::RX_SPS], eq.y[::RX_SPS], frame, guard_symbols)
            errors[arm.name] += round(m.ber * m.n_bits)
            bits[arm.name] += m.n_bits
            per_ber[arm.name].append(m.ber)
            per_q[arm.name].append(m.q_db)

    results = {}
    for name in names:
        ber = errors[name] / bits[name]
        q_db, clamped = q_from_ber(ber, bits[name])
        results[name] = ArmResult(
            name=name,
            ber=ber,
            q_db=q_db,
            q_clamped=clamped,
            n_bits=bits[name],
            per_run_ber=tuple(per_ber[name]),
            per_run_q_db=tuple(per_q[name]),
        )
    return results


def equalized_symbols(
    spec: RunSpec,
    arm: Arm,
    n_symbols: int,
    run_index: int = 0,
    purpose: str = "test_run",
    guard_symbols: int = 128,
    use_mimo: bool = True,
    mimo_cfg: MimoConfig | None = None,
    symmetric: bool = True,
    power_weighted: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Up to n_symbols interior equalized symbols per polarization of one run.

    Symbols are scaled by the per-polarization least-squares gain against the
    transmitted frame, so they land on the nominal constellation grid --
    ready for scatter plots without further normalization.
    """
    if n_symbols < 1:
        raise ParameterError(f"n_symbols must be >= 1, got {n_symbols}")
    pmd = pmd_for(spec)
    dmap = spec.link.dispersion_map()
    plans = _arm_plans([arm], dmap, spec, symmetric, power_weighted)
    rx, frames = simulate_run(spec, run_index, purpose, pmd)
    frame = frames[spec.wdm.center_index]
    if arm.kind == "pmd_aware_dbp":
        raw = receiver_front_end(rx, frame, spec, use_mimo=False)
        eq = pmd_aware_dbp(raw, plans[arm.name], pmd, spec.ssfm)
    else:
        front = receiver_front_end(
            rx, frame, spec, use_mimo=use_mimo, mimo_cfg=mimo_cfg
        )
        if arm.kind == "linear":
            eq = cd_compensate(front, dmap.residual_at_rx_ps_nm())
        elif arm.kind == "dbp":
            eq = dbp_equalize(front, plans[arm.name])
        else:
            eq = ldbp_equalize_run(arm.model, front)
    take = slice(guard_symbols, min(guard_symbols + n_symbols,
                                    spec.n_symbols - guard_symbols))
    out = []
    for sym, ref in (
        (eq.x[::RX_SPS][take], frame.symbols_x[take]),
        (eq.y[::RX_SPS][take], frame.symbols_y[take]),
    ):
        gain = np.vdot(sym, ref) / np.vdot(sym, sym)
        out.append(gain * sym)
    return out[0], out[1]


# ---------------------------------------------------------------------------
# dataset generation


def generate_dataset(
    spec: RunSpec,
    n_windows: int,
    purpose: str = "train_run",
    input_len: int = 512,
    output_len: int = 384,
    guard_symbols: int = 128,
    use_mimo: bool = True,
    mimo_cfg: MimoConfig | None = None,
    start_run: int = 0,
) -> Dataset:
    """Collect aligned (received, clean target) window pairs from fresh runs.

    Windows are cut without overlap from the guarded interior of each run;
    runs whose receiver front end fails to lock are dropped with a warning
    and replaced by later run indices. Targets are the transmitted frame
    through the receiver's own matched filter (clean_reference), centrally
    cropped to output_len under each input window.
    """
    if n_windows < 1:
        raise ParameterError(f"n_windows must be >= 1, got {n_windows}")
    if output_len > input_len or (input_len - output_len) % 2:
        raise ParameterError(
            f"window pair ({input_len}, {output_len}) needs an even, "
            "non-negative crop margin"
        )
    margin = (input_len - output_len) // 2
    guard = RX_SPS * guard_symbols
    avail = RX_SPS * spec.n_symbols - 2 * guard
    per_run = avail // input_len if avail >= input_len else 0
    if per_run == 0:
        raise ParameterError(
            f"runs of {spec.n_symbols} symbols with {guard_symbols} guard "
            f"symbols cannot fit a {input_len}-sample window"
        )
    needed_runs = -(-n_windows // per_run)
    max_attempts = 3 * needed_runs + 5

    pmd = pmd_for(spec)
    rx_x, rx_y, tx_x, tx_y = [], [], [], []
    run_indices = []
    run = start_run
    attempts = 0
    while len(rx_x) < n_windows:
        if attempts >= max_attempts:
            raise SyncError(
                f"collected only {len(rx_x)}/{n_windows} windows after "
                f"{attempts} runs; the channel does not lock"
            )
        attempts += 1
        rx, frames = simulate_run(spec, run, purpose, pmd)
        frame = frames[spec.wdm.center_index]
        try:
            front = receiver_front_end(
                rx, frame, spec, use_mimo=use_mimo, mimo_cfg=mimo_cfg
            )
        except (SyncError, AdaptationError) as exc:
            logger.warning("dropping %s run %d: %s", purpose, run, exc)
            run += 1
            continue
        ref = clean_reference(frame, spec.wdm)
        for w in range(per_run):
            if len(rx_x) >= n_windows:
                break
            a = guard + w * input_len
            rx_x.append(front.x[a : a + input_len].copy())
            rx_y.append(front.y[a : a + input_len].copy())
            tx_x.append(ref.x[a + margin : a + margin + output_len].copy())
            tx_y.append(ref.y[a + margin : a + margin + output_len].copy())
        run_indices.append(run)
        run += 1

    metadata = {
        "split": purpose,
        "master_seed": spec.master_seed,
        "run_indices": run_indices,
        "use_mimo": use_mimo,
        "n_symbols": spec.n_symbols,
        "guard_symbols": guard_symbols,
        "n_spans": spec.link.n_spans,
        "n_channels": spec.wdm.n_channels,
        "launch_power_dbm": spec.wdm.launch_power_dbm,
    }
    return Dataset(
        rx_x=np.stack(rx_x),
        rx_y=np.stack(rx_y),
        tx_x=np.stack(tx_x),
        tx_y=np.stack(tx_y),
        sample_rate=spec.rx_sample_rate,
        launch_power_dbm=spec.wdm.launch_power_dbm,
        sps=RX_SPS,
        metadata=metadata,
    ).validate()

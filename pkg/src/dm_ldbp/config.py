"""Experiment configuration: unit-checked TOML with overrides and hashing.

Every physical quantity in a config file is a quoted string carrying its
unit ("0.2 dB/km", "37.5 GHz"); the parser rejects wrong or missing units
outright, since silent unit slips are the classic way fiber experiments go
wrong. The fully resolved configuration canonicalizes to one JSON string
whose SHA-256 stamps every output artifact.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError
from .link import FiberParams, SpanConfig, SsfmConfig
from .pipeline import LinkConfig, RunSpec
from .training import TrainConfig
from .transceiver import WdmConfig

_SECTIONS = (
    "link",
    "wdm",
    "ssfm",
    "equalizer",
    "rx",
    "data",
    "training",
    "seeds",
    "sweep",
    "output",
)

_QUANTITY = re.compile(
    r"^\s*([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*(\S.*?)\s*$"
)


def parse_quantity(value, unit: str, field: str, scale: float = 1.0) -> float:
    """Parse a quoted quantity string, insisting on the exact unit."""
    if not isinstance(value, str):
        raise ConfigError(
            f"{field} must carry units as a quoted string like '1.0 {unit}', "
            f"got {value!r}"
        )
    m = _QUANTITY.match(value)
    if m is None or m.group(2) != unit:
        raise ConfigError(
            f"{field}: expected a number with units {unit!r}, got {value!r}"
        )
    return float(m.group(1)) * scale


class _Section:
    """One config table with typed, default-carrying key access."""

    def __init__(self, name: str, data: dict):
        if not isinstance(data, dict):
            raise ConfigError(f"[{name}] must be a table, got {data!r}")
        self.name = name
        self.data = dict(data)

    def _pop(self, key, default):
        return self.data.pop(key, default)

    def has(self, key) -> bool:
        return key in self.data

    def quantity(self, key, unit, default, scale=1.0):
        raw = self._pop(key, None)
        if raw is None:
            return default
        return parse_quantity(raw, unit, f"{self.name}.{key}", scale)

    def integer(self, key, default):
        raw = self._pop(key, default)
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(f"{self.name}.{key} must be an integer, got {raw!r}")
        return raw

    def number(self, key, default):
        raw = self._pop(key, default)
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{self.name}.{key} must be a number, got {raw!r}")
        return float(raw)

    def boolean(self, key, default):
        raw = self._pop(key, default)
        if not isinstance(raw, bool):
            raise ConfigError(f"{self.name}.{key} must be a boolean, got {raw!r}")
        return raw

    def string(self, key, default):
        raw = self._pop(key, default)
        if not isinstance(raw, str):
            raise ConfigError(f"{self.name}.{key} must be a string, got {raw!r}")
        return raw

    def number_list(self, key, default):
        raw = self._pop(key, default)
        if not isinstance(raw, (list, tuple)) or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) for v in raw
        ):
            raise ConfigError(
                f"{self.name}.{key} must be a list of numbers, got {raw!r}"
            )
        return tuple(float(v) for v in raw)

    def string_list(self, key, default):
        raw = self._pop(key, default)
        if not isinstance(raw, (list, tuple)) or any(
            not isinstance(v, str) for v in raw
        ):
            raise ConfigError(
                f"{self.name}.{key} must be a list of strings, got {raw!r}"
            )
        return tuple(raw)

    def finish(self):
        if self.data:
            extras = ", ".join(f"{self.name}.{k}" for k in sorted(self.data))
            raise ConfigError(f"unknown config key(s): {extras}")


# ---------------------------------------------------------------------------
# typed sections


_EQ_ID = re.compile(r"^(linear|dbp|ldbp|pmd_aware_dbp)(\d*)$")


@dataclass(frozen=True)
class EqualizerSpec:
    """Which receiver arm to run: linear | dbp | ldbp | pmd_aware_dbp."""

    kind: str
    m_steps: int | None = None
    taps_per_layer: int | None = None

    def __post_init__(self):
        if self.kind == "linear":
            object.__setattr__(self, "m_steps", None)
        elif self.m_steps is None or self.m_steps < 1:
            raise ConfigError(f"equalizer {self.kind!r} needs m_steps >= 1")

    @property
    def id(self) -> str:
        if self.kind == "linear":
            return "linear"
        return f"{self.kind}{self.m_steps}"

    @classmethod
    def from_id(cls, text: str, taps_per_layer: int | None = None) -> "EqualizerSpec":
        m = _EQ_ID.match(text)
        if m is None:
            raise ConfigError(f"unknown equalizer id {text!r}")
        kind, digits = m.groups()
        if kind == "linear":
            if digits:
                raise ConfigError(f"unknown equalizer id {text!r}")
            return cls("linear")
        if not digits:
            raise ConfigError(f"equalizer id {text!r} is missing its step count")
        return cls(kind, int(digits), taps_per_layer)


@dataclass(frozen=True)
class RxConfig:
    """Receiver DSP geometry and butterfly settings."""

    input_len: int = 512
    output_len: int = 384
    guard_symbols: int = 128
    use_mimo: bool = True
    mimo_taps: int = 15
    mimo_step_size: float = 5e-3
    mimo_passes: int = 3


@dataclass(frozen=True)
class DataConfig:
    """Run and dataset sizing."""

    n_symbols_per_run: int = 4032
    train_windows: int = 2**15
    val_windows: int = 2**12
    test_runs: int = 4


@dataclass(frozen=True)
class OutputConfig:
    constellation_symbols: int = 2000


# ---------------------------------------------------------------------------
# the resolved experiment


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved, validated experiment description."""

    link: LinkConfig
    wdm: WdmConfig
    ssfm: SsfmConfig
    equalizer: EqualizerSpec
    rx: RxConfig
    data: DataConfig
    training: TrainConfig
    sweep_equalizers: tuple[EqualizerSpec, ...]
    launch_powers_dbm: tuple[float, ...]
    master_seed: int
    output: OutputConfig
    canonical: str

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical.encode()).hexdigest()

    @property
    def data_hash(self) -> str:
        """Hash over only the settings that determine simulated datasets.

        Training and sweep settings are excluded, so a model can be retrained
        with different hyperparameters against the same recorded data without
        tripping the dataset compatibility gate.
        """
        doc = json.loads(self.canonical)
        sub = {k: doc[k] for k in ("link", "wdm", "ssfm", "rx", "data", "seeds")}
        return hashlib.sha256(
            json.dumps(sub, sort_keys=True, separators=(",", ":")).encode()
        ).hexdigest()

    def run_spec(self, launch_power_dbm: float) -> RunSpec:
        return RunSpec(
            link=self.link,
            wdm=replace(self.wdm, launch_power_dbm=float(launch_power_dbm)),
            ssfm=self.ssfm,
            n_symbols=self.data.n_symbols_per_run,
            master_seed=self.master_seed,
        )

    def all_equalizers(self) -> tuple[EqualizerSpec, ...]:
        """Sweep list when given, else the single configured equalizer."""
        return self.sweep_equalizers if self.sweep_equalizers else (self.equalizer,)


def _parse_link(table: dict) -> LinkConfig:
    s = _Section("link", table)
    n_spans = s.integer("n_spans", 28)
    smf = FiberParams(
        length_km=s.quantity("smf_length", "km", 72.0),
        alpha_db_km=s.quantity("smf_attenuation", "dB/km", 0.2),
        dispersion_ps_nm_km=s.quantity("smf_dispersion", "ps/nm/km", 17.0),
        gamma_w_km=s.quantity("smf_gamma", "1/W/km", 1.4),
    )
    dcf = FiberParams(
        length_km=s.quantity("dcf_length", "km", 13.0),
        alpha_db_km=s.quantity("dcf_attenuation", "dB/km", 0.5),
        dispersion_ps_nm_km=s.quantity("dcf_dispersion", "ps/nm/km", -80.0),
        gamma_w_km=s.quantity("dcf_gamma", "1/W/km", 2.8),
    )
    span = SpanConfig(
        smf=smf,
        dcf=dcf,
        gain_smf_db=s.quantity("gain_smf", "dB", 14.4),
        gain_dcf_db=s.quantity("gain_dcf", "dB", 6.5),
    )
    nf_raw = s._pop("noise_figure", "5 dB")
    if isinstance(nf_raw, str) and nf_raw.strip().lower() == "none":
        nf = None
    else:
        nf = parse_quantity(nf_raw, "dB", "link.noise_figure")
    link = LinkConfig(
        n_spans=n_spans,
        precompensation_ps_nm=s.quantity("precompensation", "ps/nm", -1224.0),
        residual_rx_ps_nm=s.quantity("residual_rx", "ps/nm", 0.0),
        noise_figure_db=nf,
        pmd_coef_ps_sqrt_km=s.quantity("pmd_coefficient", "ps/sqrt(km)", 0.1),
        n_pmd_sections=s.integer("pmd_sections", 8),
        span=span,
    )
    s.finish()
    return link


def _parse_wdm(table: dict) -> tuple[WdmConfig, tuple[float, ...]]:
    s = _Section("wdm", table)
    powers = s.number_list(
        "launch_powers_dbm", tuple(float(p) for p in range(-8, 1))
    )
    if not powers:
        raise ConfigError("wdm.launch_powers_dbm must not be empty")
    wdm = WdmConfig(
        n_channels=s.integer("n_channels", 5),
        spacing_hz=s.quantity("spacing", "GHz", 37.5e9, scale=1e9),
        baud=s.quantity("baud", "GBd", 32e9, scale=1e9),
        rolloff=s.number("rolloff", 0.06),
        sps=s.integer("sps", 16),
        launch_power_dbm=powers[0],
        rrc_span=s.integer("rrc_span_symbols", 64),
    )
    s.finish()
    if wdm.sps % 2:
        raise ConfigError(f"wdm.sps must be even, got {wdm.sps}")
    return wdm, powers


def _parse_ssfm(table: dict) -> SsfmConfig:
    s = _Section("ssfm", table)
    ssfm = SsfmConfig(
        steps_smf=s.integer("steps_smf", 72),
        steps_dcf=s.integer("steps_dcf", 13),
        nonlinearity=s.string("nonlinearity", "cnlse"),
    )
    s.finish()
    return ssfm


def _parse_equalizer(table: dict) -> EqualizerSpec:
    s = _Section("equalizer", table)
    has_kind = s.has("kind")
    kind = s.string("kind", "ldbp")
    if kind not in ("linear", "dbp", "ldbp", "pmd_aware_dbp"):
        raise ConfigError(f"equalizer.kind must be one of linear/dbp/ldbp/"
                          f"pmd_aware_dbp, got {kind!r}")
    has_steps = s.has("m_steps")
    m_steps = s.integer("m_steps", 28)
    taps = s.integer("taps_per_layer", 0) if s.has("taps_per_layer") else None
    s.finish()
    if kind == "linear":
        return EqualizerSpec("linear")
    if has_kind and not has_steps:
        raise ConfigError(
            f"equalizer.m_steps is required when equalizer.kind = {kind!r}"
        )
    if m_steps < 1:
        raise ConfigError(f"equalizer.m_steps must be >= 1, got {m_steps}")
    return EqualizerSpec(kind, m_steps, taps)


def _parse_rx(table: dict) -> RxConfig:
    s = _Section("rx", table)
    rx = RxConfig(
        input_len=s.integer("input_len", 512),
        output_len=s.integer("output_len", 384),
        guard_symbols=s.integer("guard_symbols", 128),
        use_mimo=s.boolean("use_mimo", True),
        mimo_taps=s.integer("mimo_taps", 15),
        mimo_step_size=s.number("mimo_step_size", 5e-3),
        mimo_passes=s.integer("mimo_passes", 3),
    )
    s.finish()
    if rx.input_len < 2 or rx.input_len % 2:
        raise ConfigError(f"rx.input_len must be even and >= 2, got {rx.input_len}")
    if rx.output_len < 2 or rx.output_len > rx.input_len:
        raise ConfigError(
            f"rx.output_len must lie in [2, input_len], got {rx.output_len}"
        )
    if (rx.input_len - rx.output_len) % 2:
        raise ConfigError("rx window crop margin must be even")
    if rx.guard_symbols < 0:
        raise ConfigError("rx.guard_symbols must be >= 0")
    return rx


def _parse_data(table: dict) -> DataConfig:
    s = _Section("data", table)
    data = DataConfig(
        n_symbols_per_run=s.integer("n_symbols_per_run", 4032),
        train_windows=s.integer("train_windows", 2**15),
        val_windows=s.integer("val_windows", 2**12),
        test_runs=s.integer("test_runs", 4),
    )
    s.finish()
    if data.n_symbols_per_run < 256:
        raise ConfigError("data.n_symbols_per_run must be >= 256")
    if data.train_windows < 1 or data.val_windows < 1 or data.test_runs < 1:
        raise ConfigError("data sizes must be >= 1")
    return data


def _parse_training(table: dict, master_seed: int) -> TrainConfig:
    s = _Section("training", table)
    cfg = TrainConfig(
        optimizer=s.string("optimizer", "adam"),
        learning_rate=s.number("learning_rate", 1e-4),
        batch_size=s.integer("batch_size", 32),
        epochs=s.integer("epochs", 10),
        seed=master_seed,
        loss=s.string("loss", "mse_waveform"),
        freeze_gamma=s.boolean("freeze_gamma", False),
        tie_gamma=s.boolean("tie_gamma", False),
    )
    s.finish()
    return cfg.validate()


def _parse_output(table: dict) -> OutputConfig:
    s = _Section("output", table)
    out = OutputConfig(
        constellation_symbols=s.integer("constellation_symbols", 2000)
    )
    s.finish()
    if out.constellation_symbols < 0:
        raise ConfigError("output.constellation_symbols must be >= 0")
    return out


def _canonical(cfg: "ExperimentConfig") -> str:
    smf = cfg.link.span.smf if cfg.link.span else None
    dcf = cfg.link.span.dcf if cfg.link.span else None
    doc = {
        "link": {
            "n_spans": cfg.link.n_spans,
            "smf": {
                "length_km": smf.length_km,
                "alpha_db_km": smf.alpha_db_km,
                "dispersion_ps_nm_km": smf.dispersion_ps_nm_km,
                "gamma_w_km": smf.gamma_w_km,
            },
            "dcf": {
                "length_km": dcf.length_km,
                "alpha_db_km": dcf.alpha_db_km,
                "dispersion_ps_nm_km": dcf.dispersion_ps_nm_km,
                "gamma_w_km": dcf.gamma_w_km,
            },
            "gain_smf_db": cfg.link.span.gain_smf_db,
            "gain_dcf_db": cfg.link.span.gain_dcf_db,
            "precompensation_ps_nm": cfg.link.precompensation_ps_nm,
            "residual_rx_ps_nm": cfg.link.residual_rx_ps_nm,
            "noise_figure_db": cfg.link.noise_figure_db,
            "pmd_coef_ps_sqrt_km": cfg.link.pmd_coef_ps_sqrt_km,
            "pmd_sections": cfg.link.n_pmd_sections,
        },
        "wdm": {
            "n_channels": cfg.wdm.n_channels,
            "spacing_hz": cfg.wdm.spacing_hz,
            "baud_hz": cfg.wdm.baud,
            "rolloff": cfg.wdm.rolloff,
            "sps": cfg.wdm.sps,
            "rrc_span_symbols": cfg.wdm.rrc_span,
            "launch_powers_dbm": list(cfg.launch_powers_dbm),
        },
        "ssfm": {
            "steps_smf": cfg.ssfm.steps_smf,
            "steps_dcf": cfg.ssfm.steps_dcf,
            "nonlinearity": cfg.ssfm.nonlinearity,
        },
        "equalizer": {
            "kind": cfg.equalizer.kind,
            "m_steps": cfg.equalizer.m_steps,
            "taps_per_layer": cfg.equalizer.taps_per_layer,
        },
        "rx": {
            "input_len": cfg.rx.input_len,
            "output_len": cfg.rx.output_len,
            "guard_symbols": cfg.rx.guard_symbols,
            "use_mimo": cfg.rx.use_mimo,
            "mimo_taps": cfg.rx.mimo_taps,
            "mimo_step_size": cfg.rx.mimo_step_size,
            "mimo_passes": cfg.rx.mimo_passes,
        },
        "data": {
            "n_symbols_per_run": cfg.data.n_symbols_per_run,
            "train_windows": cfg.data.train_windows,
            "val_windows": cfg.data.val_windows,
            "test_runs": cfg.data.test_runs,
        },
        "training": {
            "optimizer": cfg.training.optimizer,
            "learning_rate": cfg.training.learning_rate,
            "batch_size": cfg.training.batch_size,
            "epochs": cfg.training.epochs,
            "loss": cfg.training.loss,
            "freeze_gamma": cfg.training.freeze_gamma,
            "tie_gamma": cfg.training.tie_gamma,
        },
        "seeds": {"master": cfg.master_seed},
        "sweep": {"equalizers": [e.id for e in cfg.sweep_equalizers]},
        "output": {"constellation_symbols": cfg.output.constellation_symbols},
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def apply_override(data: dict, text: str) -> None:
    """Apply one section.key=value override onto the raw config dict."""
    path, eq, raw = text.partition("=")
    parts = path.strip().split(".")
    if not eq or len(parts) != 2 or not all(parts):
        raise ConfigError(
            f"override must look like section.key=value, got {text!r}"
        )
    section, key = parts
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    if not isinstance(data.get(section), dict):
        data[section] = {}
    data[section][key] = value


def parse_config(data: dict, overrides: list[str] | tuple[str, ...] = ()) -> ExperimentConfig:
    """Validate a raw config dict (TOML-shaped) into an ExperimentConfig."""
    work = {k: dict(v) if isinstance(v, dict) else v for k, v in data.items()}
    for text in overrides:
        apply_override(work, text)
    unknown = set(work) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")

    seeds = _Section("seeds", work.get("seeds", {}))
    master_seed = seeds.integer("master", 2026)
    seeds.finish()

    link = _parse_link(work.get("link", {}))
    wdm, powers = _parse_wdm(work.get("wdm", {}))
    ssfm = _parse_ssfm(work.get("ssfm", {}))
    equalizer = _parse_equalizer(work.get("equalizer", {}))
    rx = _parse_rx(work.get("rx", {}))
    dat = _parse_data(work.get("data", {}))
    training = _parse_training(work.get("training", {}), master_seed)
    output = _parse_output(work.get("output", {}))

    sw = _Section("sweep", work.get("sweep", {}))
    sweep_ids = sw.string_list("equalizers", ())
    sw.finish()
    sweep_eqs = tuple(
        EqualizerSpec.from_id(i, equalizer.taps_per_layer) for i in sweep_ids
    )

    cfg = ExperimentConfig(
        link=link,
        wdm=wdm,
        ssfm=ssfm,
        equalizer=equalizer,
        rx=rx,
        data=dat,
        training=training,
        sweep_equalizers=sweep_eqs,
        launch_powers_dbm=powers,
        master_seed=master_seed,
        output=output,
        canonical="",
    )
    _cross_validate(cfg)
    object.__setattr__(cfg, "canonical", _canonical(cfg))
    return cfg


def _cross_validate(cfg: ExperimentConfig) -> None:
    taps = cfg.equalizer.taps_per_layer
    if taps is not None:
        if taps < 1 or taps > cfg.rx.input_len:
            raise ConfigError(
                f"equalizer.taps_per_layer must lie in [1, rx.input_len], got {taps}"
            )
        if taps % 2 == 0 and taps != cfg.rx.input_len:
            raise ConfigError(
                "equalizer.taps_per_layer must be odd (or exactly the full window)"
            )
    uses_ldbp = any(e.kind == "ldbp" for e in cfg.all_equalizers())
    if uses_ldbp and (2 * cfg.data.n_symbols_per_run) % cfg.rx.output_len:
        raise ConfigError(
            f"data.n_symbols_per_run = {cfg.data.n_symbols_per_run} does not "
            f"make the run a multiple of the model output "
            f"({cfg.rx.output_len} samples); the layered equalizer cannot "
            "tile it"
        )


def load_config(path, overrides: list[str] | tuple[str, ...] = ()) -> ExperimentConfig:
    """Read a TOML config file and resolve it (missing keys take defaults)."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"no such config file: {p}")
    try:
        data = tomllib.loads(p.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: malformed TOML: {exc}") from exc
    return parse_config(data, overrides)


def default_config(overrides: list[str] | tuple[str, ...] = ()) -> ExperimentConfig:
    """The published 28-span parameter set, optionally overridden."""
    return parse_config({}, overrides)

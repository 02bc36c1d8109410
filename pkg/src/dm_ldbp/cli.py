"""Command-line experiment driver.

Four subcommands cover the full workflow:

* ``simulate``  -- transmit seeded runs and write train/val datasets
* ``train``     -- fit the learned equalizer on a recorded dataset
* ``evaluate``  -- measure the configured equalizer on fresh test runs
* ``sweep``     -- cartesian (equalizer x launch power) evaluation grid

Every artifact embeds the configuration hash and master seed; with
``--timing`` left off, repeating a command byte-identically reproduces its
outputs. Exit codes: 0 success, 2 configuration problem, 3 numeric failure,
4 receiver synchronization/convergence failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from multiprocessing import get_context
from pathlib import Path

from . import __version__
from .config import (
    EqualizerSpec,
    ExperimentConfig,
    default_config,
    load_config,
)
from .dbp import build_dbp_plan
from .errors import (
    AdaptationError,
    ConfigError,
    NumericalError,
    ParameterError,
    SyncError,
)
from .ldbp import LdbpModel, init_from_dbp, load_checkpoint, save_checkpoint
from .link import save_pmd
from .pipeline import Arm, equalized_symbols, evaluate_cell, generate_dataset, pmd_for
from .rxdsp import MimoConfig
from .training import load_dataset, save_dataset, train

logger = logging.getLogger(__name__)

DATASET_FORMAT = 1


# ---------------------------------------------------------------------------
# small shared helpers


def _power_tag(power: float) -> str:
    return f"{power:+.1f}dBm"


def _mimo_cfg(cfg: ExperimentConfig) -> MimoConfig:
    return MimoConfig(
        n_taps=cfg.rx.mimo_taps,
        step_size=cfg.rx.mimo_step_size,
        passes=cfg.rx.mimo_passes,
    )


def _assemble_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = list(args.override)
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seeds.master={args.seed}")
    if getattr(args, "spans", None) is not None:
        overrides.append(f"link.n_spans={args.spans}")
    if getattr(args, "channels", None) is not None:
        overrides.append(f"wdm.n_channels={args.channels}")
    if args.config is not None:
        return load_config(args.config, overrides)
    return default_config(overrides)


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv_text(comment: str, header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _provenance(cfg: ExperimentConfig) -> str:
    return f"config_hash={cfg.config_hash} master_seed={cfg.master_seed}"


def _map_jobs(jobs: list, worker, n_workers: int) -> list:
    """Run jobs in order, forking a pool only when it can actually help."""
    if n_workers > 1 and len(jobs) > 1:
        with get_context("fork").Pool(min(n_workers, len(jobs))) as pool:
            return pool.map(worker, jobs)
    return [worker(job) for job in jobs]


# ---------------------------------------------------------------------------
# simulate


def _simulate_power(job) -> dict:
    cfg, power, ds_dir = job
    spec = cfg.run_spec(power)
    mimo = _mimo_cfg(cfg)
    entry = {"launch_power_dbm": power, "files": {}}
    for split, purpose, n_windows in (
        ("train", "train_run", cfg.data.train_windows),
        ("val", "val_run", cfg.data.val_windows),
    ):
        ds = generate_dataset(
            spec,
            n_windows,
            purpose,
            input_len=cfg.rx.input_len,
            output_len=cfg.rx.output_len,
            guard_symbols=cfg.rx.guard_symbols,
            use_mimo=cfg.rx.use_mimo,
            mimo_cfg=mimo,
        )
        name = f"{split}_{_power_tag(power)}.ds"
        save_dataset(ds, Path(ds_dir) / name)
        entry["files"][split] = f"datasets/{name}"
        logger.info("wrote %s (%d windows)", name, n_windows)
    return entry


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _assemble_config(args)
    out = Path(args.out)
    ds_dir = out / "datasets"
    ds_dir.mkdir(parents=True, exist_ok=True)

    pmd = pmd_for(cfg.run_spec(cfg.launch_powers_dbm[0]))
    save_pmd(pmd, out / "pmd.json")

    jobs = [(cfg, power, str(ds_dir)) for power in cfg.launch_powers_dbm]
    entries = _map_jobs(jobs, _simulate_power, args.workers)

    manifest = {
        "config_hash": cfg.config_hash,
        "data_hash": cfg.data_hash,
        "seeds": {"master": cfg.master_seed},
        "versions": {"package": __version__, "dataset_format": DATASET_FORMAT},
        "link": {"n_spans": cfg.link.n_spans, "n_channels": cfg.wdm.n_channels},
        "pmd_file": "pmd.json",
        "datasets": entries,
    }
    _atomic_write_text(
        out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    logger.info("simulate finished: %d launch powers -> %s", len(entries), out)
    return 0


# ---------------------------------------------------------------------------
# train


def _check_dataset_manifest(cfg: ExperimentConfig, data_dir: Path) -> None:
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.is_file():
        raise ConfigError(
            f"no dataset manifest at {manifest_path}; run `dm-ldbp simulate` first"
        )
    manifest = json.loads(manifest_path.read_text())
    recorded = manifest.get("data_hash", manifest.get("config_hash"))
    if recorded != cfg.data_hash:
        raise ConfigError(
            f"dataset at {data_dir} was simulated from a different "
            "configuration (data hash mismatch); re-run simulate or align "
            "--config/--override"
        )


def _train_power(job) -> tuple[float, str]:
    cfg, power, data_dir, out_dir, resume = job
    eq = cfg.equalizer
    tag = _power_tag(power)
    data_dir = Path(data_dir)
    out = Path(out_dir)
    train_ds = load_dataset(data_dir / "datasets" / f"train_{tag}.ds")
    val_ds = load_dataset(data_dir / "datasets" / f"val_{tag}.ds")

    if resume is not None:
        resume = Path(resume)
        source = resume / f"{eq.id}_{tag}.json" if resume.is_dir() else resume
        model = load_checkpoint(source)
    else:
        spec = cfg.run_spec(power)
        plan = build_dbp_plan(
            cfg.link.dispersion_map(),
            eq.m_steps,
            power,
            spec.rx_sample_rate,
            cfg.rx.input_len,
        )
        model = init_from_dbp(
            plan, taps_per_layer=eq.taps_per_layer, output_len=cfg.rx.output_len
        )
        model.metadata.update(
            {
                "config_hash": cfg.config_hash,
                "master_seed": cfg.master_seed,
                "equalizer": eq.id,
                "launch_power_dbm": power,
            }
        )

    result = train(model, train_ds, cfg.training, val_ds)

    ck_path = out / "checkpoints" / f"{eq.id}_{tag}.json"
    save_checkpoint(result.model, ck_path)

    rows: list[list] = [[0, None, result.val_loss_trace[0], result.val_q_trace[0]]]
    for epoch, loss in enumerate(result.loss_trace, start=1):
        rows.append(
            [epoch, loss, result.val_loss_trace[epoch], result.val_q_trace[epoch]]
        )
    trace = _csv_text(
        f"{_provenance(cfg)} launch_power_dbm={power}",
        ["epoch", "train_loss", "val_loss", "val_q_db"],
        rows,
    )
    _atomic_write_text(out / "traces" / f"{eq.id}_{tag}.csv", trace)
    logger.info(
        "trained %s at %s: best epoch %d, val Q %.2f dB",
        eq.id, tag, result.best_epoch, result.best_val_q,
    )
    return power, str(ck_path)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _assemble_config(args)
    if cfg.equalizer.kind != "ldbp":
        raise ConfigError(
            f"train fits the learned equalizer; equalizer.kind is "
            f"{cfg.equalizer.kind!r} (set kind = \"ldbp\" or drop the key)"
        )
    out = Path(args.out)
    data_dir = Path(args.data) if args.data else out
    _check_dataset_manifest(cfg, data_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "traces").mkdir(parents=True, exist_ok=True)

    resume = str(args.resume) if args.resume else None
    jobs = [
        (cfg, power, str(data_dir), str(out), resume)
        for power in cfg.launch_powers_dbm
    ]
    _map_jobs(jobs, _train_power, args.workers)
    return 0


# ---------------------------------------------------------------------------
# evaluate / sweep


RESULT_COLUMNS = [
    "equalizer",
    "m_steps",
    "launch_power_dbm",
    "ber",
    "q_db",
    "n_bits",
    "seed",
    "wall_time_s",
    "error",
]


def _build_arm(cfg: ExperimentConfig, eq: EqualizerSpec, power: float,
               checkpoints: Path) -> Arm:
    if eq.kind == "linear":
        return Arm(kind="linear", label=eq.id)
    if eq.kind in ("dbp", "pmd_aware_dbp"):
        return Arm(kind=eq.kind, m_steps=eq.m_steps, label=eq.id)
    path = checkpoints / f"{eq.id}_{_power_tag(power)}.json"
    if not path.is_file():
        raise ConfigError(
            f"learned equalizer {eq.id} at {_power_tag(power)} needs a "
            f"checkpoint; {path} does not exist (run `dm-ldbp train`)"
        )
    model = load_checkpoint(path)
    _check_model_geometry(cfg, eq, model)
    return Arm(kind="ldbp", m_steps=eq.m_steps, model=model, label=eq.id)


def _check_model_geometry(cfg: ExperimentConfig, eq: EqualizerSpec,
                          model: LdbpModel) -> None:
    spec = cfg.run_spec(cfg.launch_powers_dbm[0])
    if (
        model.input_len != cfg.rx.input_len
        or model.output_len != cfg.rx.output_len
        or abs(model.sample_rate - spec.rx_sample_rate) > 1e-3
    ):
        raise ConfigError(
            f"checkpoint for {eq.id} was trained with windows "
            f"{model.input_len}->{model.output_len} at {model.sample_rate:g} "
            f"samples/s, which does not match the configured receiver"
        )


def _eval_cell(job) -> tuple[str, int | None, float, dict | None, list, str | None]:
    """One (equalizer, power) cell; returns row fields or an error string."""
    cfg, eq, power, checkpoints, timing, capture_all = job
    spec = cfg.run_spec(power)
    try:
        arm = _build_arm(cfg, eq, power, Path(checkpoints))
        start = time.perf_counter()
        res = evaluate_cell(
            spec,
            [arm],
            cfg.data.test_runs,
            "test_run",
            guard_symbols=cfg.rx.guard_symbols,
            use_mimo=cfg.rx.use_mimo,
            mimo_cfg=_mimo_cfg(cfg),
        )[eq.id]
        wall = time.perf_counter() - start if timing else 0.0
        row = {"ber": res.ber, "q_db": res.q_db, "n_bits": res.n_bits, "wall": wall}
        n_con = cfg.output.constellation_symbols
        constellation = []
        if n_con > 0:
            sx, sy = equalized_symbols(
                spec,
                arm,
                n_con,
                guard_symbols=cfg.rx.guard_symbols,
                use_mimo=cfg.rx.use_mimo,
                mimo_cfg=_mimo_cfg(cfg),
            )
            constellation = [("x", sx), ("y", sy)]
        return eq.id, eq.m_steps, power, row, constellation, None
    except (SyncError, AdaptationError) as exc:
        return eq.id, eq.m_steps, power, None, [], f"{type(exc).__name__}: {exc}"
    except (ConfigError, ParameterError, NumericalError) as exc:
        if capture_all:
            return eq.id, eq.m_steps, power, None, [], f"{type(exc).__name__}: {exc}"
        raise


def _run_cells(cfg: ExperimentConfig, equalizers, args, capture_all: bool):
    checkpoints = str(args.checkpoints) if args.checkpoints else str(
        Path(args.out) / "checkpoints"
    )
    cells = sorted(
        ((eq, power) for eq in equalizers for power in cfg.launch_powers_dbm),
        key=lambda c: (c[0].id, c[1]),
    )
    jobs = [
        (cfg, eq, power, checkpoints, args.timing, capture_all)
        for eq, power in cells
    ]
    return _map_jobs(jobs, _eval_cell, args.workers)


def _write_results(cfg: ExperimentConfig, outcomes, out: Path,
                   include_failed_rows: bool) -> None:
    rows = []
    con_rows = []
    for eq_id, m_steps, power, row, constellation, error in outcomes:
        if row is not None:
            rows.append(
                [eq_id, m_steps, power, row["ber"], row["q_db"], row["n_bits"],
                 cfg.master_seed, row["wall"], None]
            )
        elif include_failed_rows:
            rows.append(
                [eq_id, m_steps, power, None, None, None,
                 cfg.master_seed, 0.0, error]
            )
        for pol, symbols in constellation:
            for value in symbols:
                con_rows.append(
                    [eq_id, power, pol, float(value.real), float(value.imag)]
                )
    _atomic_write_text(
        out / "results.csv", _csv_text(_provenance(cfg), RESULT_COLUMNS, rows)
    )
    _atomic_write_text(
        out / "constellations.csv",
        _csv_text(
            _provenance(cfg),
            ["equalizer", "launch_power_dbm", "polarization", "re", "im"],
            con_rows,
        ),
    )


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _assemble_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outcomes = _run_cells(cfg, (cfg.equalizer,), args, capture_all=False)
    _write_results(cfg, outcomes, out, include_failed_rows=True)
    for eq_id, _, power, row, _, error in outcomes:
        if error:
            logger.warning("%s at %s failed: %s", eq_id, _power_tag(power), error)
        else:
            logger.info(
                "%s at %s: BER %.3e, Q %.2f dB",
                eq_id, _power_tag(power), row["ber"], row["q_db"],
            )
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _assemble_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outcomes = _run_cells(cfg, cfg.all_equalizers(), args, capture_all=True)
    _write_results(cfg, outcomes, out, include_failed_rows=False)

    failures = [
        [eq_id, m_steps, power, error]
        for eq_id, m_steps, power, row, _, error in outcomes
        if row is None
    ]
    _atomic_write_text(
        out / "failures.csv",
        _csv_text(
            _provenance(cfg),
            ["equalizer", "m_steps", "launch_power_dbm", "error"],
            failures,
        ),
    )

    peaks: dict[str, tuple] = {}
    for eq_id, m_steps, power, row, _, error in outcomes:
        if row is None:
            continue
        best = peaks.get(eq_id)
        if best is None or row["q_db"] > best[3]:
            peaks[eq_id] = (eq_id, m_steps, power, row["q_db"])
    summary = [list(peaks[k]) for k in sorted(peaks)]
    _atomic_write_text(
        out / "summary.csv",
        _csv_text(
            _provenance(cfg),
            ["equalizer", "m_steps", "peak_launch_power_dbm", "peak_q_db"],
            summary,
        ),
    )
    done = sum(1 for o in outcomes if o[3] is not None)
    logger.info(
        "sweep finished: %d/%d cells, %d failures", done, len(outcomes), len(failures)
    )
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dm-ldbp",
        description="Dispersion-managed transmission and learned equalization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, default=None,
                       help="TOML experiment file (built-in defaults if omitted)")
        p.add_argument("--override", action="append", default=[],
                       metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")
        p.add_argument("--out", type=Path, required=True,
                       help="output directory for artifacts")
        p.add_argument("--workers", type=int, default=1,
                       help="parallel worker processes")
        p.add_argument("--seed", type=int, default=None,
                       help="shorthand for --override seeds.master=N")

    p_sim = sub.add_parser("simulate", help="generate train/val datasets")
    common(p_sim)
    p_sim.add_argument("--spans", type=int, default=None,
                       help="shorthand for --override link.n_spans=N")
    p_sim.add_argument("--channels", type=int, default=None,
                       help="shorthand for --override wdm.n_channels=N")

    p_train = sub.add_parser("train", help="fit the learned equalizer")
    common(p_train)
    p_train.add_argument("--data", type=Path, default=None,
                         help="dataset directory (defaults to --out)")
    p_train.add_argument("--resume", type=Path, default=None,
                         help="checkpoint file or directory to continue from")

    for name, doc in (
        ("evaluate", "measure the configured equalizer on fresh test runs"),
        ("sweep", "evaluate every sweep equalizer at every launch power"),
    ):
        p_eval = sub.add_parser(name, help=doc)
        common(p_eval)
        p_eval.add_argument("--checkpoints", type=Path, default=None,
                            help="checkpoint directory (default: <out>/checkpoints)")
        p_eval.add_argument("--timing", action="store_true",
                            help="record real wall times "
                                 "(breaks byte-reproducibility)")

    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (SyncError, AdaptationError) as exc:
        print(f"receiver failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

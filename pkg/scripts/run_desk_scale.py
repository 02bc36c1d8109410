#!/usr/bin/env python3
"""Desk-scale end-to-end experiment: simulate, train, sweep, in one sitting.

A shrunken version of the full 28-span study that finishes on a laptop:
4 spans, 3 WDM channels, a 5-point launch-power grid, and both step counts
of the learned equalizer against plain backpropagation and the
PMD-aware genie. Artifacts (datasets, checkpoints, traces, results.csv,
summary.csv, constellations.csv) land under --out.

Typical use:

    python3 scripts/run_desk_scale.py --out runs/desk
    python3 scripts/plot_results.py runs/desk/results.csv --out runs/desk/q_vs_power.png
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from dm_ldbp.cli import main as dm_ldbp  # noqa: E402

POWERS = "[1.0, 2.0, 3.0, 4.0, 5.0]"

DESK_OVERRIDES = [
    "link.n_spans=4",
    "wdm.n_channels=3",
    f"wdm.launch_powers_dbm={POWERS}",
    "data.n_symbols_per_run=4032",
    "data.train_windows=4096",
    "data.val_windows=256",
    "data.test_runs=3",
    "training.epochs=10",
]


def run(argv: list[str]) -> None:
    print(f"$ dm-ldbp {' '.join(argv)}", flush=True)
    code = dm_ldbp(argv)
    if code != 0:
        sys.exit(code)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("runs/desk"))
    parser.add_argument("--seed", type=int, default=2026)
    parser.add_argument("--m-steps", type=int, nargs="+", default=[2, 4])
    parser.add_argument("--skip-simulate", action="store_true",
                        help="reuse datasets already present under --out")
    args = parser.parse_args()

    common = [f"--override={o}" for o in DESK_OVERRIDES]
    common += ["--seed", str(args.seed), "--out", str(args.out)]

    if not args.skip_simulate:
        run(["simulate", *common])

    for m in args.m_steps:
        run(["train", *common,
             "--override", 'equalizer.kind="ldbp"',
             "--override", f"equalizer.m_steps={m}"])

    sweep_arms = (
        [f'"dbp{m}"' for m in args.m_steps]
        + [f'"ldbp{m}"' for m in args.m_steps]
        + [f'"pmd_aware_dbp{max(args.m_steps)}"', '"linear"']
    )
    run(["sweep", *common,
         "--override", f"sweep.equalizers=[{', '.join(sweep_arms)}]"])

    print(f"\ndone -- see {args.out}/results.csv and {args.out}/summary.csv")


if __name__ == "__main__":
    main()

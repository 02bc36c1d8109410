#!/usr/bin/env python3
"""Plot Q-factor versus launch power from a sweep's results.csv.

One curve per equalizer, peak markers from the paired summary.csv when it
sits next to the results file. Requires matplotlib (install the package
with the [plot] extra).

    python3 scripts/plot_results.py runs/desk/results.csv --out q_vs_power.png
"""

import argparse
import csv
from collections import defaultdict
from pathlib import Path


def load_rows(path: Path) -> list[dict]:
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    return [row for row in csv.DictReader(lines) if not row.get("error")]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("results", type=Path)
    parser.add_argument("--out", type=Path, default=None,
                        help="output image (default: show interactively)")
    args = parser.parse_args()

    try:
        import matplotlib
        if args.out is not None:
            matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise SystemExit(
            "matplotlib is required for plotting: pip install matplotlib"
        ) from exc

    curves: dict[str, list[tuple[float, float]]] = defaultdict(list)
    for row in load_rows(args.results):
        curves[row["equalizer"]].append(
            (float(row["launch_power_dbm"]), float(row["q_db"]))
        )

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name in sorted(curves):
        pts = sorted(curves[name])
        ax.plot([p for p, _ in pts], [q for _, q in pts], "o-", label=name)
        peak = max(pts, key=lambda t: t[1])
        ax.annotate(f"{peak[1]:.1f}", peak, textcoords="offset points",
                    xytext=(0, 6), ha="center", fontsize=8)

    ax.set_xlabel("launch power per channel [dBm]")
    ax.set_ylabel("Q factor [dB]")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()

    if args.out is not None:
        fig.savefig(args.out, dpi=150)
        print(f"wrote {args.out}")
    else:
        plt.show()


if __name__ == "__main__":
    main()

"""Figures from habcov run directories.

    python scripts/plot.py curve runs/qmix            # learning curve
    python scripts/plot.py heatmap runs/base 42       # coverage heatmap
    python scripts/plot.py bars runs/base runs/qmix_eval
"""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd


def curve(run: Path, out: Path) -> None:
    df = pd.read_csv(run / "curve.csv")
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    for ax, col in zip(axes, ["mean_reward", "mean_group_twr", "mean_separation_ratio"]):
        ax.plot(df["step"], df[col])
        ax.set_xlabel("environment steps")
        ax.set_title(col)
    fig.tight_layout()
    fig.savefig(out)


def read_pgm(path: Path) -> np.ndarray:
    tokens = []
    for line in path.read_text().splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    w, h = int(tokens[1]), int(tokens[2])
    return np.array(tokens[4:], dtype=float).reshape(h, w)


def heatmap(run: Path, seed: str, out: Path) -> None:
    counts = read_pgm(run / "heatmaps" / f"seed_{seed}.pgm")
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(counts, cmap="viridis")
    fig.colorbar(im, ax=ax, label="visits (capped)")
    ax.set_title(f"{run.name} seed {seed}")
    ax.set_xticks([])
    ax.set_yticks([])
    fig.savefig(out)


def bars(runs: list[Path], out: Path) -> None:
    cols = ["mean_group_twr", "mean_separation_ratio_normalized", "percent_area_coverage", "mean_coverage_over_time"]
    frames = [pd.read_csv(r / "metrics.csv")[cols] for r in runs]
    x = np.arange(len(cols))
    width = 0.8 / len(runs)
    fig, ax = plt.subplots(figsize=(9, 3.5))
    for i, (run, df) in enumerate(zip(runs, frames)):
        ax.bar(x + i * width, df.mean(), width, yerr=df.std(), label=run.name, capsize=3)
    ax.set_xticks(x + width * (len(runs) - 1) / 2, cols, fontsize=8)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out)


def main() -> None:
    p = argparse.ArgumentParser()
    sub = p.add_subparsers(dest="kind", required=True)
    c = sub.add_parser("curve")
    c.add_argument("run", type=Path)
    h = sub.add_parser("heatmap")
    h.add_argument("run", type=Path)
    h.add_argument("seed")
    b = sub.add_parser("bars")
    b.add_argument("runs", type=Path, nargs="+")
    p.add_argument("-o", "--out", type=Path, default=Path("figure.png"))
    a = p.parse_args()
    if a.kind == "curve":
        curve(a.run, a.out)
    elif a.kind == "heatmap":
        heatmap(a.run, a.seed, a.out)
    else:
        bars(a.runs, a.out)


if __name__ == "__main__":
    main()

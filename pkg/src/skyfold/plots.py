"""Report figures rendered next to the CSV artifacts.

CSV stays the machine-readable contract; these PNGs are the human-readable
companions the report pipeline drops in the same output directory.  The Agg
backend keeps rendering headless and deterministic.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

PathLike = Union[str, Path]


def plot_success_vs_noise(rows: Sequence[Mapping[str, object]], path: PathLike) -> None:
    """One identification-success curve per modulus pair, over noise sigma."""
    pairs = sorted({(int(r["p1"]), int(r["p2"])) for r in rows})
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for p1, p2 in pairs:
        pts = sorted(
            (float(r["sigma"]), float(r["success_rate"]))
            for r in rows
            if int(r["p1"]) == p1 and int(r["p2"]) == p2
        )
        ax.plot(
            [p[0] for p in pts],
            [p[1] for p in pts],
            marker="o",
            label=f"folds ({p1}, {p2})",
        )
    ax.set_xlabel("added Gaussian noise sigma (photons/pixel)")
    ax.set_ylabel("identification success rate")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_recovered_cells(
    per_trial_correct: Sequence[int], k: int, path: PathLike
) -> None:
    """Correct recovered cells per trial against the k/2 guarantee line."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    xs = range(1, len(per_trial_correct) + 1)
    ax.plot(list(xs), list(per_trial_correct), marker=".", linestyle="", alpha=0.8)
    ax.axhline(k / 2, color="tab:red", linestyle="--", label="k/2")
    ax.axhline(k, color="tab:gray", linestyle=":", label="k")
    ax.set_xlabel("trial")
    ax.set_ylabel("correctly recovered cells")
    ax.set_ylim(0, k + 2)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

"""Line-chart reporting for run records, emitted as self-contained SVG."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .harness import RunRecord

__all__ = ["plot_records"]


def plot_records(records: Sequence[RunRecord], out_path) -> Path:
    """Per-agent simple-regret curves plus a privacy-cost panel (message
    bytes per round), one figure per call, written as SVG."""
    out = Path(out_path)
    if out.suffix.lower() != ".svg":
        out = out.with_suffix(".svg")
    fig, (ax_regret, ax_bytes) = plt.subplots(1, 2, figsize=(11, 4.2))

    for rec in records:
        label_base = rec.config["framework"]
        rounds = np.arange(1, rec.regret.shape[0] + 1)
        for k in range(rec.regret.shape[1]):
            ax_regret.plot(
                rounds,
                rec.regret[:, k],
                alpha=0.8,
                label=f"{label_base} seed={rec.config['seed']} agent {k}",
            )
        ax_bytes.plot(
            rounds,
            rec.bytes_per_round(),
            marker="o",
            markersize=3,
            label=f"{label_base} seed={rec.config['seed']}",
        )

    ax_regret.set_xlabel("round")
    ax_regret.set_ylabel("simple regret")
    ax_regret.set_yscale("symlog", linthresh=1e-6)
    ax_regret.set_title("per-agent simple regret")
    if sum(r.regret.shape[1] for r in records) <= 12:
        ax_regret.legend(fontsize=7)
    ax_bytes.set_xlabel("round")
    ax_bytes.set_ylabel("message bytes shared")
    ax_bytes.set_title("privacy cost per round")
    ax_bytes.legend(fontsize=7)
    fig.tight_layout()
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format="svg")
    plt.close(fig)
    return out

"""Curve data (.dat + manifest) and matplotlib figures for reports."""
from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 4.2),
    "axes.labelsize": 11,
    "axes.titlesize": 11,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 9,
    "legend.frameon": False,
    "lines.linewidth": 1.6,
    "lines.markersize": 5,
    "grid.alpha": 0.3,
    "grid.linestyle": "--",
    "savefig.dpi": 120,
}


def write_dat(path: Path, xs, ys, header: str) -> None:
    lines = [f"# {header}"] + [f"{x!r} {y!r}" for x, y in zip(xs, ys)]
    path.write_text("\n".join(lines) + "\n")


def write_manifest(curve_dir: Path, entries: list[dict]) -> None:
    (curve_dir / "manifest.json").write_text(json.dumps({"curves": entries}, indent=2) + "\n")


def sweep_curves(out: Path, report) -> list[dict]:
    """One .dat per aggregated metric: axis value vs median."""
    curve_dir = out / "curves"
    curve_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    summary = report.to_dict()
    for metric, agg in summary["aggregates"].items():
        if not agg:
            continue
        name = f"{metric}_vs_{report.spec.axis}.dat"
        write_dat(curve_dir / name, [a["value"] for a in agg], [a["median"] for a in agg],
                  f"{report.spec.axis} median_{metric}")
        entries.append({"file": name, "x": report.spec.axis, "y": f"median {metric}",
                        "fit": summary["fits"].get(metric)})
    write_manifest(curve_dir, entries)
    return entries


def sweep_figure(out: Path, report) -> Path:
    """Log-log medians with IQR bars and fitted power laws."""
    fig_dir = out / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    summary = report.to_dict()
    axis = report.spec.axis
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for metric, agg in summary["aggregates"].items():
            if not agg:
                continue
            x = np.array([a["value"] for a in agg], dtype=float)
            y = np.array([a["median"] for a in agg])
            err = np.array([a["iqr"] for a in agg]) / 2
            fit = summary["fits"].get(metric)
            label = metric if fit is None else f"{metric} (slope {fit['exponent']:.2f})"
            line = ax.errorbar(x, y, yerr=err, marker="o", capsize=3, label=label)
            if fit is not None:
                ax.plot(x, np.exp(fit["intercept"]) * x ** fit["exponent"], ls=":",
                        color=line[0].get_color())
        ax.set_xscale("log", base=2)
        ax.set_yscale("log")
        ax.set_xlabel(axis)
        ax.set_ylabel("error (median over replicas)")
        ax.grid(True, which="major")
        ax.legend()
        path = fig_dir / f"sweep_{axis}.png"
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def run_curves(out: Path, transcript) -> list[dict]:
    """Reliability data for a single run: node midpoint vs mean outcome."""
    curve_dir = out / "curves"
    curve_dir.mkdir(parents=True, exist_ok=True)
    counts = np.bincount(transcript.p_node, minlength=len(transcript.nodes))
    sums = np.bincount(transcript.p_node, weights=transcript.y, minlength=len(transcript.nodes))
    used = np.flatnonzero(counts)
    mids = np.array([transcript.nodes[v].mid for v in used])
    order = np.argsort(mids, kind="stable")
    used, mids = used[order], mids[order]
    means = sums[used] / counts[used]
    write_dat(curve_dir / "reliability.dat", mids, means, "prediction mean_outcome")
    write_dat(curve_dir / "play_counts.dat", mids, counts[used].astype(float), "prediction rounds")
    entries = [
        {"file": "reliability.dat", "x": "prediction", "y": "mean outcome"},
        {"file": "play_counts.dat", "x": "prediction", "y": "rounds"},
    ]
    write_manifest(curve_dir, entries)
    return entries


def run_figure(out: Path, transcript) -> Path:
    fig_dir = out / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    counts = np.bincount(transcript.p_node, minlength=len(transcript.nodes))
    sums = np.bincount(transcript.p_node, weights=transcript.y, minlength=len(transcript.nodes))
    used = np.flatnonzero(counts)
    mids = np.array([transcript.nodes[v].mid for v in used])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot([0, 1], [0, 1], color="0.6", ls="--", lw=1)
        sizes = 10 + 200 * counts[used] / counts.max()
        ax.scatter(mids, sums[used] / counts[used], s=sizes, alpha=0.7)
        ax.set_xlim(0, 1)
        ax.set_ylim(-0.02, 1.02)
        ax.set_xlabel("realized prediction")
        ax.set_ylabel("mean outcome")
        ax.grid(True)
        path = fig_dir / "reliability.png"
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path

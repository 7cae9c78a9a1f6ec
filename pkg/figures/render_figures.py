#!/usr/bin/env python3
"""Render unimap CLI artifacts into static figures.

Consumes only the documented artifact files of a run directory:

    matrix_*.txt        -> one heatmap per dump (real part, symmetric scale)
    distributions.csv   -> one panel per snapshot time, F normalized to its
                           maximum, annotated with <x> and Gamma from
                           diagnostics.csv
    diagnostics.csv + classical_orbit.csv -> trajectory overlay

Rendering is read-only on the input directory and deterministic: fixed
figure sizes, fixed color scales derived from the data, no timestamps or
software tags embedded in the images.

Usage:
    render_figures.py --in <artifact dir> --out <img dir> --which all
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

PNG_KW = dict(dpi=110, metadata={"Software": None})


class ArtifactError(Exception):
    """An expected artifact file is missing or unreadable."""


class SchemaError(Exception):
    """An artifact exists but its header or layout is wrong."""


@dataclass(frozen=True)
class FigureJob:
    input_dir: Path
    output_dir: Path
    which: str = "all"  # matrices | histograms | trajectory | all

    def __post_init__(self):
        if self.which not in ("matrices", "histograms", "trajectory", "all"):
            raise ValueError(f"unknown figure selector {self.which!r}")
        if not self.input_dir.is_dir():
            raise ArtifactError(f"input directory not found: {self.input_dir}")


# ---------------------------------------------------------------------------
# artifact readers

def read_matrix_dump(path: Path):
    """Parse `row col re im` lines under a `# unimap-matrix v1 ...` header."""
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}")
    if not lines or not lines[0].startswith("# unimap-matrix v1 "):
        raise SchemaError(f"{path}: missing 'unimap-matrix v1' header")
    fields = dict(tok.split("=", 1) for tok in lines[0].split()[3:])
    try:
        n = int(fields["N"])
    except (KeyError, ValueError):
        raise SchemaError(f"{path}: header lacks a valid N")
    out = np.zeros((n, n), dtype=complex)
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 4:
            raise SchemaError(f"{path}: malformed entry line {ln!r}")
        r, c = int(parts[0]) - 1, int(parts[1]) - 1
        out[r, c] = float(parts[2]) + 1j * float(parts[3])
    return out, fields


def read_csv(path: Path, required: tuple[str, ...]):
    """Read a comma-separated table into {column: list of strings}."""
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}")
    if not lines:
        raise SchemaError(f"{path}: empty file")
    header = lines[0].split(",")
    for col in required:
        if col not in header:
            raise SchemaError(f"{path}: missing column '{col}'")
    table = {col: [] for col in header}
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != len(header):
            raise SchemaError(f"{path}: row width {len(cells)} != header {len(header)}")
        for col, cell in zip(header, cells):
            table[col].append(cell)
    return table


def load_diagnostics(run_dir: Path):
    table = read_csv(run_dir / "diagnostics.csv",
                     ("t", "mean_x", "Gamma", "std_x", "norm"))
    return {
        "t": np.array([int(v) for v in table["t"]]),
        "mean_x": np.array([float(v) for v in table["mean_x"]]),
        "Gamma": np.array([float(v) for v in table["Gamma"]]),
    }


def load_distributions(run_dir: Path):
    table = read_csv(run_dir / "distributions.csv", ("t", "a", "x", "F"))
    ts = np.array([int(v) for v in table["t"]])
    xs = np.array([float(v) for v in table["x"]])
    Fs = np.array([float(v) for v in table["F"]])
    out = {}
    for t in sorted(set(ts.tolist())):
        mask = ts == t
        order = np.argsort(xs[mask])
        out[t] = (xs[mask][order], Fs[mask][order])
    return out


def load_orbit(run_dir: Path):
    table = read_csv(run_dir / "classical_orbit.csv", ("t", "x"))
    return (np.array([int(v) for v in table["t"]]),
            np.array([float(v) for v in table["x"]]))


# ---------------------------------------------------------------------------
# renderers

def render_matrices(job: FigureJob) -> list[str]:
    dumps = sorted(job.input_dir.glob("matrix_*.txt"))
    if not dumps:
        raise ArtifactError(f"no matrix_*.txt dumps in {job.input_dir}")
    written = []
    for dump in dumps:
        entries, fields = read_matrix_dump(dump)
        real = entries.real
        vmax = float(np.abs(real).max()) or 1.0
        fig, ax = plt.subplots(figsize=(4.6, 4.2))
        im = ax.imshow(real, cmap="RdBu_r", vmin=-vmax, vmax=vmax,
                       origin="upper", interpolation="nearest",
                       extent=(0.5, real.shape[1] + 0.5, real.shape[0] + 0.5, 0.5))
        ax.set_xlabel("column index b")
        ax.set_ylabel("row index a")
        ax.set_title(f"{fields.get('stage', '?')}  ({fields.get('basis', '?')})",
                     fontsize=10)
        fig.colorbar(im, ax=ax, fraction=0.046)
        fig.tight_layout()
        name = f"fig_{dump.stem}.png"
        fig.savefig(job.output_dir / name, **PNG_KW)
        plt.close(fig)
        written.append(name)
    return written


def render_histograms(job: FigureJob) -> list[str]:
    snapshots = load_distributions(job.input_dir)
    diag = load_diagnostics(job.input_dir)
    by_t = {int(t): i for i, t in enumerate(diag["t"])}
    written = []
    for t, (xs, Fs) in snapshots.items():
        peak = Fs.max() or 1.0
        fig, ax = plt.subplots(figsize=(4.6, 3.0))
        ax.fill_between(xs, Fs / peak, step="mid", alpha=0.4)
        ax.step(xs, Fs / peak, where="mid", linewidth=1.0)
        ax.set_xlim(xs.min(), xs.max())
        ax.set_ylim(0, 1.08)
        ax.set_xlabel("x")
        ax.set_ylabel("F / max F")
        ax.set_title(f"t = {t}", fontsize=10)
        if t in by_t:
            i = by_t[t]
            ax.annotate(
                f"<x> = {diag['mean_x'][i]:.3f}\nGamma = {diag['Gamma'][i]:.3f}",
                xy=(0.97, 0.95), xycoords="axes fraction",
                ha="right", va="top", fontsize=9,
            )
        fig.tight_layout()
        name = f"fig_hist_t{t}.png"
        fig.savefig(job.output_dir / name, **PNG_KW)
        plt.close(fig)
        written.append(name)
    return written


def render_trajectory(job: FigureJob) -> list[str]:
    diag = load_diagnostics(job.input_dir)
    t_orbit, x_orbit = load_orbit(job.input_dir)
    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    ax.plot(t_orbit, x_orbit, "-o", color="tab:blue", markersize=4,
            label="classical orbit")
    ax.plot(diag["t"], diag["mean_x"], "-s", color="tab:red", markersize=4,
            label="<x> from unitary evolution")
    ax.set_xlabel("iteration t")
    ax.set_ylabel("x")
    ax.legend(fontsize=9)
    fig.tight_layout()
    name = "fig_trajectory.png"
    fig.savefig(job.output_dir / name, **PNG_KW)
    plt.close(fig)
    return [name]


def render(job: FigureJob) -> list[str]:
    """Run the selected renderers; returns the written image names."""
    job.output_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if job.which in ("matrices", "all"):
        written += render_matrices(job)
    if job.which in ("histograms", "all"):
        written += render_histograms(job)
    if job.which in ("trajectory", "all"):
        written += render_trajectory(job)
    return written


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--in", dest="input_dir", required=True)
    parser.add_argument("--out", dest="output_dir", required=True)
    parser.add_argument("--which", default="all",
                        choices=("matrices", "histograms", "trajectory", "all"))
    args = parser.parse_args(argv)
    try:
        job = FigureJob(input_dir=Path(args.input_dir),
                        output_dir=Path(args.output_dir), which=args.which)
        written = render(job)
    except (ArtifactError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for name in written:
        print(f"wrote {Path(args.output_dir) / name}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

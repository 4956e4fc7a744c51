"""Per-iteration diagnostics: a delimited metrics table plus PNG figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

METRIC_FIELDS = [
    "iteration", "coverage", "delta", "num_keywords", "pseudo_covered",
    "pseudo_micro_f1", "pseudo_macro_f1", "pseudo_accuracy",
    "micro_f1", "macro_f1", "accuracy", "wall_time_s",
]


def read_metrics(run_dir) -> list[dict]:
    path = Path(run_dir) / "metrics.jsonl"
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_metrics_csv(records: Sequence[Mapping], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for rec in records:
            writer.writerow({k: ("" if rec.get(k) is None else rec.get(k)) for k in METRIC_FIELDS})


def _series(records, key):
    pts = [(r["iteration"], r[key]) for r in records if r.get(key) is not None]
    return [p[0] for p in pts], [p[1] for p in pts]


def plot_run(records: Sequence[Mapping], path, epsilon: float = 0.1) -> None:
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.6))
    ax = axes[0]
    for key, style in (("pseudo_micro_f1", "o-"), ("pseudo_macro_f1", "s--")):
        x, y = _series(records, key)
        if x:
            ax.plot(x, y, style, label=key.replace("pseudo_", ""))
    ax.set_title("pseudo-label quality")
    ax = axes[1]
    for key, style in (("micro_f1", "o-"), ("macro_f1", "s--")):
        x, y = _series(records, key)
        if x:
            ax.plot(x, y, style, label=key)
    ax.set_title("classifier")
    ax = axes[2]
    x, y = _series(records, "coverage")
    ax.plot(x, y, "o-", label="coverage")
    x, y = _series(records, "delta")
    ax.plot(x, y, "s-", label="keyword change")
    ax.axhline(epsilon, color="grey", ls=":", lw=1, label="threshold")
    ax.set_title("coverage / keyword change")
    for ax in axes:
        ax.set_xlabel("iteration")
        ax.set_ylim(-0.02, 1.02)
        ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_comparison(runs: Mapping[str, Sequence[Mapping]], path,
                    keys=("pseudo_micro_f1", "pseudo_macro_f1", "micro_f1", "macro_f1")) -> None:
    """One panel per metric, one line per run (e.g. annotator vs counting)."""
    fig, axes = plt.subplots(1, len(keys), figsize=(3.4 * len(keys), 3.2), squeeze=False)
    for ax, key in zip(axes[0], keys):
        for name, records in runs.items():
            x, y = _series(records, key)
            if x:
                ax.plot(x, y, "o-", label=name)
        ax.set_title(key)
        ax.set_xlabel("iteration")
        ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_report(run_dirs: Sequence, out_dir, names: Sequence[str] = (), epsilon: float = 0.1) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = list(names) or [Path(d).name for d in run_dirs]
    written = []
    runs = {}
    for name, d in zip(names, run_dirs):
        records = read_metrics(d)
        runs[name] = records
        csv_path = out_dir / f"{name}_metrics.csv"
        png_path = out_dir / f"{name}_iterations.png"
        write_metrics_csv(records, csv_path)
        plot_run(records, png_path, epsilon)
        written += [csv_path, png_path]
    if len(runs) > 1:
        cmp_path = out_dir / "comparison.png"
        plot_comparison(runs, cmp_path)
        written.append(cmp_path)
    return written

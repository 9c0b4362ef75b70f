"""Tables, curve plots, rank summaries and correlation distributions from
saved run records. All figures are written as SVG."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "bae-explain"  # stable element ids
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .compare import ScoreTable, average_ranks, cd_diagram_svg, cd_summary, summary_json  # noqa: E402
from .experiment import record_filename, record_label  # noqa: E402

# metric -> True when larger is better
METRICS = {"g_sdc": True, "g_sser": True, "seqi": True, "mcc": True, "pearson": False}
HIGH_CORRELATION = 0.8
SVG_META = {"Date": None}


def metric_value(record: dict, metric: str) -> float | None:
    value = record["report"].get(metric)
    if value is None:
        return None
    # correlation is compared by magnitude
    return abs(value) if metric == "pearson" else value


def run_key(record: dict) -> str:
    cell = record["cell"]
    return f"{record['name']}|c{cell['capacity']:g}-d{cell['depth']}|{record['scenario']['key']}"


def score_table(records: list[dict], metric: str) -> ScoreTable:
    rows: dict[str, dict[str, float | None]] = defaultdict(dict)
    methods = sorted({record_label(r) for r in records})
    for r in records:
        rows[run_key(r)][record_label(r)] = metric_value(r, metric)
    return ScoreTable.from_rows(methods, rows)


def write_metric_tables(records: list[dict], out: Path) -> list[Path]:
    paths = []
    for metric, higher in METRICS.items():
        groups: dict[tuple[str, str], list[float]] = defaultdict(list)
        for r in records:
            v = metric_value(r, metric)
            groups[(r["name"], record_label(r))].append(math.nan if v is None else v)
        best: dict[str, tuple[float, str]] = {}
        stats = {}
        for (dataset, label), vals in sorted(groups.items()):
            arr = np.asarray(vals)
            finite = arr[np.isfinite(arr)]
            mean = float(finite.mean()) if finite.size else math.nan
            std = float(finite.std()) if finite.size else math.nan
            stats[(dataset, label)] = (mean, std, int(finite.size))
            if finite.size:
                key = mean if higher else -mean
                if dataset not in best or key > best[dataset][0]:
                    best[dataset] = (key, label)
        path = out / f"table_{metric}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["dataset", "method", "mean", "std", "n", "best"])
            for (dataset, label), (mean, std, n) in stats.items():
                is_best = dataset in best and best[dataset][1] == label
                w.writerow([dataset, label, f"{mean:.6f}", f"{std:.6f}", n, "*" if is_best else ""])
        paths.append(path)
    return paths


def plot_curves(record: dict, path: Path) -> None:
    curves = record["curves"]
    shift, noshift = np.asarray(curves["shift_mean"]), np.asarray(curves["noshift_mean"])
    n = np.arange(shift.size)
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.plot(n, shift, color="tab:red", label="shifting sensors")
    ax.plot(n, noshift, color="tab:blue", label="non-shifting sensors")
    r = record["report"].get("pearson")
    if r is not None:
        ax.text(0.02, 0.95, f"r = {r:.3f}", transform=ax.transAxes, va="top")
    ax.set_xlabel("test cycle")
    ax.set_ylabel("normalised attribution")
    ax.set_title(f"{record_label(record)}  {record['scenario']['key']}", fontsize=9)
    ax.legend(fontsize=8, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)


def complementary_ecdf(values, thresholds) -> np.ndarray:
    """Fraction of values strictly above each threshold."""
    v = np.asarray(values, dtype=np.float64)
    t = np.asarray(thresholds, dtype=np.float64)
    if v.size == 0:
        return np.zeros_like(t)
    return (v[None, :] > t[:, None]).mean(axis=1)


def pearson_by_method(records: list[dict]) -> dict[str, list[float]]:
    out: dict[str, list[float]] = defaultdict(list)
    for r in records:
        v = r["report"].get("pearson")
        if v is not None:
            out[record_label(r)].append(float(v))
    return dict(sorted(out.items()))


def plot_pearson_ccdf(records: list[dict], path: Path) -> dict[str, float]:
    """Complementary ECDF of Pearson r per method; returns P(r > 0.8)."""
    by_method = pearson_by_method(records)
    grid = np.linspace(-1, 1, 401)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    above = {}
    for label, vals in by_method.items():
        style = "-" if label.startswith("centralised") else ":"
        ax.step(grid, complementary_ecdf(vals, grid), style, where="post", label=label)
        above[label] = float(complementary_ecdf(vals, [HIGH_CORRELATION])[0])
    ax.axvline(HIGH_CORRELATION, color="k", lw=2.5)
    ax.set_xlabel("Pearson r (shifting vs non-shifting)")
    ax.set_ylabel("P(R > r)")
    ax.set_xlim(-1, 1)
    ax.set_ylim(0, 1.02)
    if by_method:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)
    return above


def rank_summary(records: list[dict], metric: str = "seqi", alpha: float = 0.05) -> dict:
    table = score_table(records, metric)
    higher = METRICS[metric]
    n, k = table.values.shape
    if n >= 2 and k >= 2:
        summary = cd_summary(table, alpha, higher_is_better=higher)
    else:
        ranks = average_ranks(table, higher) if n else np.full(k, np.nan)
        order = sorted(range(k), key=lambda j: (ranks[j], table.methods[j]))
        summary = {
            "methods": [table.methods[j] for j in order],
            "average_ranks": [float(ranks[j]) for j in order],
            "n_rows": n,
            "alpha": alpha,
            "friedman": None,
            "pairwise": [],
            "cliques": [[table.methods[j] for j in order]] if k else [],
            "note": "too few runs or methods for significance testing",
        }
    summary["metric"] = metric
    summary["higher_is_better"] = higher
    return summary


def write_rank_summary(records: list[dict], out: Path, metric: str = "seqi", alpha: float = 0.05) -> dict:
    summary = rank_summary(records, metric, alpha)
    (out / f"rank_summary_{metric}.json").write_text(summary_json(summary), encoding="utf-8")
    cd_diagram_svg(summary, out / f"rank_summary_{metric}.svg", title=f"average rank ({metric})")
    return summary


def emit_report(records: list[dict], out_dir) -> dict:
    if not records:
        raise ValueError("no records to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plots = out / "curves"
    plots.mkdir(exist_ok=True)
    tables = write_metric_tables(records, out)
    for r in records:
        plot_curves(r, plots / record_filename(r).replace(".json", ".svg"))
    summaries = {m: write_rank_summary(records, out, m) for m in METRICS}
    above = plot_pearson_ccdf(records, out / "pearson_ccdf.svg")
    (out / "pearson_high_fraction.json").write_text(
        json.dumps({"threshold": HIGH_CORRELATION, "fraction_above": above}, indent=2, sort_keys=True),
        encoding="utf-8",
    )
    return {"tables": [str(p) for p in tables], "rank_summaries": summaries, "pearson_above": above}

"""Rank-based comparison of methods across many runs.

A score table has one row per experimental run and one column per method.
The Friedman test screens for any difference; if it rejects, pairwise
Wilcoxon signed-rank tests with Holm correction decide which methods are
distinguishable, and methods that cannot be told apart are joined into
cliques for a critical-difference style diagram.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

EXACT_WILCOXON_MAX_N = 12


@dataclass
class ScoreTable:
    methods: list[str]
    values: np.ndarray
    row_labels: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.methods):
            raise ValueError("table must be rows x methods")
        if self.row_labels is None:
            self.row_labels = [str(i) for i in range(self.values.shape[0])]

    @classmethod
    def from_rows(cls, methods, rows: dict[str, dict[str, float | None]]) -> "ScoreTable":
        """Build from {row label: {method: value}}, dropping rows with any
        missing or absent value."""
        labels, values = [], []
        for label in sorted(rows):
            cells = [rows[label].get(m) for m in methods]
            if any(c is None or not math.isfinite(c) for c in cells):
                continue
            labels.append(label)
            values.append(cells)
        return cls(list(methods), np.array(values, dtype=np.float64).reshape(-1, len(methods)), labels)


def _row_ranks(values: np.ndarray, higher_is_better: bool) -> np.ndarray:
    sign = -1.0 if higher_is_better else 1.0
    return np.apply_along_axis(lambda r: stats.rankdata(sign * r, method="average"), 1, values)


def friedman(table: ScoreTable) -> tuple[float, float]:
    n, k = table.values.shape
    if n < 2 or k < 2:
        raise ValueError(f"Friedman test needs at least 2 rows and 2 methods, got {n}x{k}")
    mean_ranks = _row_ranks(table.values, higher_is_better=False).mean(axis=0)
    chi2 = 12.0 * n / (k * (k + 1)) * (float(np.sum(mean_ranks**2)) - k * (k + 1) ** 2 / 4.0)
    chi2 = max(chi2, 0.0)
    return chi2, float(stats.chi2.sf(chi2, k - 1))


def _signed_ranks(a, b):
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if d.ndim != 1:
        raise ValueError("paired vectors must be 1-D with equal length")
    d = d[d != 0]
    return d, stats.rankdata(np.abs(d), method="average")


def wilcoxon_exact_pvalue(ranks: np.ndarray, w: float) -> float:
    """P(min(W+, W-) <= w) under random signs, by counting subset sums.

    Ranks may be half-integers (averaged ties), so sums are doubled.
    """
    doubled = np.rint(2 * np.asarray(ranks)).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    sums = np.arange(total + 1)
    w2 = int(round(2 * w))
    hit = (np.minimum(sums, total - sums) <= w2)
    return float(min(1.0, counts[hit].sum() / 2.0 ** len(doubled)))


def wilcoxon_signed_rank(a, b) -> tuple[float, float]:
    """Two-sided test; exact for up to 12 non-zero differences, normal
    approximation with tie and continuity correction beyond that."""
    if len(a) != len(b):
        raise ValueError("paired vectors must have equal length")
    d, ranks = _signed_ranks(a, b)
    n = d.size
    if n == 0:
        return 0.0, 1.0
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)
    if n <= EXACT_WILCOXON_MAX_N:
        return w, wilcoxon_exact_pvalue(ranks, w)
    return w, wilcoxon_normal_pvalue(ranks, w)


def wilcoxon_normal_pvalue(ranks: np.ndarray, w: float) -> float:
    """Two-sided normal approximation with tie and continuity correction."""
    ranks = np.asarray(ranks, dtype=np.float64)
    n = ranks.size
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_counts**3 - tie_counts)) / 48.0
    if var <= 0:
        return 1.0
    z = min(w - mean + 0.5, 0.0) / math.sqrt(var)
    return float(min(1.0, 2.0 * stats.norm.cdf(z)))


def average_ranks(table: ScoreTable, higher_is_better: bool = True) -> np.ndarray:
    return _row_ranks(table.values, higher_is_better).mean(axis=0)


def holm(pvalues: list[float]) -> list[float]:
    """Holm step-down adjusted p-values, in input order."""
    m = len(pvalues)
    order = np.argsort(pvalues, kind="stable")
    adjusted = np.empty(m)
    running = 0.0
    for i, idx in enumerate(order):
        running = max(running, min(1.0, (m - i) * pvalues[idx]))
        adjusted[idx] = running
    return adjusted.tolist()


def cd_summary(table: ScoreTable, alpha: float = 0.05, higher_is_better: bool = True) -> dict:
    """Average ranks, pairwise tests and cliques of indistinguishable methods.

    Pairwise tests only run when the Friedman test rejects at ``alpha``.
    Cliques are maximal runs of methods, in average-rank order, with no
    significant pair inside them; a method distinguishable from both
    neighbours forms a clique of its own.
    """
    ranks = average_ranks(table, higher_is_better)
    order = sorted(range(len(table.methods)), key=lambda j: (ranks[j], table.methods[j]))
    stat, p = friedman(table)
    summary = {
        "methods": [table.methods[j] for j in order],
        "average_ranks": [float(ranks[j]) for j in order],
        "n_rows": int(table.values.shape[0]),
        "alpha": alpha,
        "friedman": {"statistic": stat, "p_value": p},
        "pairwise": [],
    }
    k = len(order)
    significant = np.zeros((k, k), dtype=bool)
    if p > alpha:
        summary["note"] = "no significant differences"
        summary["cliques"] = [summary["methods"]] if k else []
        return summary
    pairs = list(itertools.combinations(range(k), 2))
    raw = [wilcoxon_signed_rank(table.values[:, order[i]], table.values[:, order[j]]) for i, j in pairs]
    adjusted = holm([r[1] for r in raw])
    for (i, j), (w, p_raw), p_adj in zip(pairs, raw, adjusted):
        significant[i, j] = significant[j, i] = p_adj <= alpha
        summary["pairwise"].append({
            "a": table.methods[order[i]],
            "b": table.methods[order[j]],
            "statistic": w,
            "p_value": p_raw,
            "p_holm": p_adj,
            "significant": bool(p_adj <= alpha),
        })
    cliques = []
    for start in range(k):
        end = start
        while end + 1 < k and not significant[start:end + 2, start:end + 2].any():
            end += 1
        if end > start and not any(c[0] <= start and end <= c[1] for c in cliques):
            cliques.append((start, end))
    covered = {i for s, e in cliques for i in range(s, e + 1)}
    cliques.extend((i, i) for i in range(k) if i not in covered)
    cliques.sort()
    summary["cliques"] = [[summary["methods"][i] for i in range(s, e + 1)] for s, e in cliques]
    return summary


def summary_json(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True)


def cd_diagram_svg(summary: dict, path, title: str = "") -> None:
    """Horizontal rank axis with method labels and clique bars."""
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "bae-explain"
    import matplotlib.pyplot as plt

    methods, ranks = summary["methods"], summary["average_ranks"]
    k = len(methods)
    lo, hi = 1, max(k, 2)
    fig, ax = plt.subplots(figsize=(7, 1.6 + 0.35 * k))
    ax.set_xlim(lo - 0.3, hi + 0.3)
    ax.set_ylim(-(k + len(summary["cliques"]) + 1), 1.5)
    ax.hlines(0, lo, hi, color="k")
    for t in range(lo, hi + 1):
        ax.vlines(t, 0, 0.2, color="k")
        ax.text(t, 0.35, str(t), ha="center", va="bottom", fontsize=9)
    for i, (m, r) in enumerate(zip(methods, ranks)):
        y = -(i + 1)
        ax.plot([r, r], [0, y], color="0.4", lw=0.8)
        ax.text(hi + 0.25, y, f"{m} ({r:.2f})", ha="left", va="center", fontsize=9)
        ax.plot([r, hi + 0.2], [y, y], color="0.4", lw=0.8)
    bars = [c for c in summary["cliques"] if len(c) > 1]
    for c, clique in enumerate(bars):
        rs = [ranks[methods.index(m)] for m in clique]
        y = -(k + 1 + c) + 0.5
        ax.plot([min(rs) - 0.05, max(rs) + 0.05], [y, y], color="k", lw=4, solid_capstyle="round")
    ax.axis("off")
    if title:
        ax.set_title(title, fontsize=10)
    fig.savefig(path, format="svg", bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)

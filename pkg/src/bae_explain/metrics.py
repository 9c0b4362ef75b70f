"""Explanation-quality scores for sensor attributions under covariate shift.

Drift coefficients measure whether a sensor's attribution curve rises
monotonically with degradation; G_SDC balances them between shifting and
non-shifting sensors. G_SSER checks whether the top-I ranked sensors at
each cycle are the shifting ones. SEQI is their weighted sum.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .cube import AttributionMatrix

# spread (in ulps of the largest magnitude) below which a series counts as constant
FLAT_ULPS = 64


def rank_desc(values) -> np.ndarray:
    """Strict ranks, 1 = largest; ties go to the lower index first."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("need a non-empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    order = np.argsort(-v, kind="stable")
    ranks = np.empty(v.size, dtype=np.int64)
    ranks[order] = np.arange(1, v.size + 1)
    return ranks


def average_ranks(values) -> np.ndarray:
    """Ascending ranks with ties sharing their mean rank."""
    return stats.rankdata(values, method="average")


def _is_flat(x: np.ndarray) -> bool:
    """True if ``x`` is constant up to floating-point rounding of its magnitude."""
    return x.size == 0 or float(np.ptp(x)) <= FLAT_ULPS * np.finfo(np.float64).eps * float(np.max(np.abs(x)))


def pearson(a, b) -> float:
    """Pearson r; an input that is constant up to rounding gives 0.

    Group curves that are constant in exact arithmetic can carry a few ulps
    of summation noise, whose correlation would otherwise be arbitrary.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("vectors must have equal length")
    if _is_flat(a) or _is_flat(b):
        return 0.0
    da, db = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        return 0.0
    return float(np.clip(float(da @ db) / denom, -1.0, 1.0))


def spearman(a, b) -> tuple[float, float]:
    """Spearman rho with a two-sided p-value from the t approximation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("vectors must be 1-D with equal length")
    n = a.size
    if n < 3:
        raise ValueError("Spearman needs at least 3 observations")
    ra, rb = average_ranks(a), average_ranks(b)
    if np.ptp(ra) == 0 or np.ptp(rb) == 0:
        return 0.0, 1.0
    rho = pearson(ra, rb)
    if abs(rho) >= 1.0:
        return rho, 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return rho, float(2.0 * stats.t.sf(abs(t), n - 2))


def drift_coefficient(attr_column, Y, alpha: float = 0.05) -> float:
    rho, p = spearman(attr_column, Y)
    return abs(rho) if p <= alpha else 0.0


def g_sdc(rho_shift, rho_noshift) -> float | None:
    """Geometric mean of mean shifting rho and mean (1 - non-shifting rho).

    Returns None when either group is empty.
    """
    rho_shift = np.asarray(rho_shift, dtype=np.float64)
    rho_noshift = np.asarray(rho_noshift, dtype=np.float64)
    if rho_shift.size == 0 or rho_noshift.size == 0:
        return None
    value = rho_shift.mean() * (1.0 - rho_noshift).mean()
    return math.sqrt(max(value, 0.0))


@dataclass(frozen=True)
class ConfusionCounts:
    TP: int
    TN: int
    FP: int
    FN: int

    @property
    def total(self) -> int:
        return self.TP + self.TN + self.FP + self.FN


def top_i_labels(scores, I: int) -> np.ndarray:
    """Per row, 1 for the I highest-ranked sensors and 0 otherwise."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    return np.stack([(rank_desc(row) <= I).astype(np.int64) for row in scores])


def ranking_confusion(scores, shift_set) -> ConfusionCounts:
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    n, k = scores.shape
    shift = sorted(set(int(s) for s in shift_set))
    gold = np.zeros((n, k), dtype=bool)
    gold[:, shift] = True
    pred = top_i_labels(scores, len(shift)).astype(bool)
    return ConfusionCounts(
        TP=int(np.sum(pred & gold)),
        TN=int(np.sum(~pred & ~gold)),
        FP=int(np.sum(pred & ~gold)),
        FN=int(np.sum(~pred & gold)),
    )


def g_mean(counts: ConfusionCounts) -> float | None:
    pos, neg = counts.TP + counts.FN, counts.TN + counts.FP
    if pos == 0 or neg == 0:
        return None
    return math.sqrt(counts.TP / pos * counts.TN / neg)


def _scores(attr) -> np.ndarray:
    return attr.scores if isinstance(attr, AttributionMatrix) else np.asarray(attr, dtype=np.float64)


def _groups(scenario, k: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    # accepts a ShiftScenario or a bare collection of shifting sensor indices
    shift = getattr(scenario, "shift_set", scenario)
    shift = tuple(sorted(set(int(s) for s in shift)))
    return shift, tuple(s for s in range(k) if s not in shift)


def g_sser(attr, scenario) -> tuple[ConfusionCounts, float | None]:
    """Confusion counts of per-cycle top-I labels against the gold shift
    labels, and the G-mean of sensitivity and specificity."""
    scores = _scores(attr)
    shift, _ = _groups(scenario, scores.shape[1])
    counts = ranking_confusion(scores, shift)
    return counts, g_mean(counts)


def seqi(g_sdc_value: float | None, g_sser_value: float | None, w1: float = 0.5, w2: float = 0.5) -> float | None:
    if w1 < 0 or w2 < 0 or not math.isclose(w1 + w2, 1.0, abs_tol=1e-12):
        raise ValueError(f"weights must be non-negative and sum to 1, got {w1}, {w2}")
    if g_sdc_value is None or g_sser_value is None:
        return None
    return w1 * g_sdc_value + w2 * g_sser_value


def mcc_signed(counts: ConfusionCounts) -> float:
    tp, tn, fp, fn = counts.TP, counts.TN, counts.FP, counts.FN
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def mcc(counts: ConfusionCounts) -> float:
    """Absolute Matthews correlation of the ranking confusion matrix."""
    return abs(mcc_signed(counts))


def group_curves(scores, shift_set, noshift_set) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    return scores[:, list(shift_set)].mean(axis=1), scores[:, list(noshift_set)].mean(axis=1)


def group_pearson(attr, scenario) -> float:
    """Pearson r between the mean curves of the shifting and non-shifting groups."""
    scores = _scores(attr)
    shift, noshift = _groups(scenario, scores.shape[1])
    if not shift or not noshift:
        raise ValueError("both sensor groups must be non-empty")
    a, b = group_curves(scores, shift, noshift)
    return pearson(a, b)


@dataclass
class EvaluationReport:
    shift_set: tuple[int, ...]
    noshift_set: tuple[int, ...]
    method: str
    config: str
    rho: list[float]
    g_sdc: float | None
    g_sser: float | None
    seqi: float | None
    mcc: float | None
    mcc_signed: float | None
    pearson: float | None
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shift_set"] = list(self.shift_set)
        d["noshift_set"] = list(self.noshift_set)
        return d


def evaluate(attr: AttributionMatrix, shift_set, Y, alpha: float = 0.05, w1: float = 0.5, w2: float = 0.5) -> EvaluationReport:
    """All scores for one attribution matrix against one shift designation."""
    scores = attr.scores
    k = scores.shape[1]
    shift, noshift = _groups(shift_set, k)
    rho = [drift_coefficient(scores[:, s], Y, alpha) for s in range(k)]
    sdc = g_sdc([rho[s] for s in shift], [rho[s] for s in noshift])
    if shift and noshift:
        counts, sser = g_sser(scores, shift)
        m_signed = mcc_signed(counts)
        m_abs, r = abs(m_signed), group_pearson(scores, shift)
        counts_d = asdict(counts)
    else:
        sser = m_signed = m_abs = r = None
        counts_d = {}
    return EvaluationReport(
        shift_set=shift,
        noshift_set=noshift,
        method=attr.method,
        config=attr.config,
        rho=rho,
        g_sdc=sdc,
        g_sser=sser,
        seqi=seqi(sdc, sser, w1, w2),
        mcc=m_abs,
        mcc_signed=m_signed,
        pearson=r,
        counts=counts_d,
    )

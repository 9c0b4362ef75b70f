import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bae_explain.cube import AttributionMatrix
from bae_explain.metrics import (
    ConfusionCounts,
    drift_coefficient,
    evaluate,
    g_sdc,
    g_sser,
    group_pearson,
    mcc,
    mcc_signed,
    pearson,
    rank_desc,
    ranking_confusion,
    seqi,
    spearman,
    top_i_labels,
)

from oracles import (
    confusion_recount,
    mcc_direct,
    pearson_direct,
    spearman_direct,
    spearman_exact_p,
    strict_rank_desc,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)


# -- ranks ---------------------------------------------------------------------------

def test_rank_desc_examples():
    assert rank_desc([0.8, 0.1, 0.2]).tolist() == [1, 3, 2]
    assert rank_desc([5]).tolist() == [1]
    assert rank_desc([1, 1]).tolist() == [1, 2]


def test_rank_desc_rejects_empty_and_nan():
    with pytest.raises(ValueError):
        rank_desc([])
    with pytest.raises(ValueError):
        rank_desc([1.0, np.nan])


@given(st.lists(st.integers(-3, 3), min_size=1, max_size=12))
def test_rank_desc_is_permutation_matching_oracle(v):
    r = rank_desc(v)
    assert sorted(r.tolist()) == list(range(1, len(v) + 1))
    assert r.tolist() == strict_rank_desc(v)


@given(st.lists(finite, min_size=1, max_size=10), st.floats(1e-3, 1e3))
def test_rank_invariant_under_positive_scaling(v, c):
    v = np.asarray(v)
    scaled = c * v
    # scaling must not create or merge ties through rounding
    assume(np.array_equal(np.argsort(-v, kind="stable"), np.argsort(-scaled, kind="stable")))
    assert rank_desc(scaled).tolist() == rank_desc(v).tolist()


# -- correlation ----------------------------------------------------------------------

def test_spearman_perfect_and_reversed():
    x = np.arange(1, 11)
    assert spearman(x, x) == (1.0, 0.0)
    assert spearman(x, x[::-1])[0] == -1.0


def test_spearman_hand_example():
    rho, p = spearman([1, 2, 3, 4, 5], [1, 3, 2, 5, 4])
    assert rho == pytest.approx(0.8, abs=1e-12)
    # t = 0.8*sqrt(3/0.36); two-sided Student-t with 3 dof
    assert p == pytest.approx(0.10408803866182788, abs=1e-9)


def test_spearman_t_approximation_gap_at_five_points():
    # exact permutation p is 16/120: eight orderings per tail reach |rho| >= 0.8.
    # the t-approximation sits 0.029 below it, so small-L agreement is loose.
    exact = spearman_exact_p([1, 2, 3, 4, 5], [1, 3, 2, 5, 4])
    assert exact == pytest.approx(16 / 120)
    assert abs(spearman([1, 2, 3, 4, 5], [1, 3, 2, 5, 4])[1] - exact) == pytest.approx(0.0292, abs=1e-3)


def test_spearman_zero_variance():
    assert spearman([1, 1, 1, 1], [1, 2, 3, 4]) == (0.0, 1.0)


def test_spearman_rejects_short_or_ragged():
    with pytest.raises(ValueError):
        spearman([1, 2], [1, 2])
    with pytest.raises(ValueError):
        spearman([1, 2, 3], [1, 2])


@pytest.mark.parametrize("seed", range(10))
def test_spearman_p_matches_exact_permutation_at_nine_points(seed):
    rng = np.random.default_rng(seed)
    a = rng.random(9)
    b = a * rng.uniform(-1, 1) + rng.random(9)
    assert abs(spearman(a, b)[1] - spearman_exact_p(a, b)) <= 0.02


@given(st.lists(st.integers(0, 5), min_size=3, max_size=12), st.data())
def test_spearman_rho_matches_direct_formula(a, data):
    b = data.draw(st.lists(st.integers(0, 5), min_size=len(a), max_size=len(a)))
    rho, p = spearman(a, b)
    expected = spearman_direct(a, b)
    assert rho == pytest.approx(expected, abs=1e-9)
    assert -1 <= rho <= 1 and 0 <= p <= 1


@given(arrays(np.float64, 12, elements=st.floats(-5, 5), unique=True), st.sampled_from(["exp", "cube", "shift"]))
def test_spearman_invariant_under_monotone_transform(a, how):
    y = np.linspace(0, 1, 12)
    f = {"exp": np.exp, "cube": lambda v: v**3, "shift": lambda v: 3 * v + 7}[how]
    fa = f(a)
    assume(len(np.unique(fa)) == len(fa))
    assert spearman(fa, y)[0] == pytest.approx(spearman(a, y)[0], abs=1e-12)
    assert drift_coefficient(fa, y) == pytest.approx(drift_coefficient(a, y), abs=1e-12)


def test_pearson_zero_variance_and_example():
    assert pearson([1, 1, 1], [1, 2, 3]) == 0.0
    assert pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(0.9819805060619657, abs=1e-12)


# -- drift coefficient -------------------------------------------------------------------

def test_drift_coefficient_examples():
    y = np.linspace(0, 1, 50)
    assert drift_coefficient(np.arange(50) ** 2, y) == 1.0
    assert drift_coefficient(np.full(50, 3.0), y) == 0.0


def test_drift_coefficient_noise_rarely_significant():
    y = np.linspace(0, 1, 200)
    zeros = sum(drift_coefficient(np.random.default_rng(s).normal(size=200), y) == 0 for s in range(100))
    assert zeros >= 90


def test_drift_coefficient_uses_magnitude():
    y = np.linspace(0, 1, 30)
    assert drift_coefficient(-np.arange(30.0), y) == 1.0


# -- G_SDC, G_SSER, SEQI, MCC -----------------------------------------------------------

def test_g_sdc_examples():
    assert g_sdc([1, 1], [0, 0]) == 1.0
    assert g_sdc([0, 0], [0.3]) == 0.0
    assert g_sdc([0.9, 0.7], [0.2]) == pytest.approx(0.8, abs=1e-12)
    assert g_sdc([], [0.2]) is None
    assert g_sdc([0.5], []) is None


def test_g_sser_perfect_and_inverted():
    scores = np.array([[5.0, 1.0, 0.0], [4.0, 3.0, 2.0]])
    counts, value = g_sser(scores, (0,))
    assert value == 1.0 and counts == ConfusionCounts(2, 4, 0, 0)
    assert g_sser(scores, (2,))[1] == 0.0


def test_g_sser_hand_example():
    scores = np.array([[3.0, 1.0, 2.0], [1.0, 3.0, 2.0]])
    counts, value = g_sser(scores, (0,))
    assert counts == ConfusionCounts(TP=1, TN=3, FP=1, FN=1)
    assert value == pytest.approx(math.sqrt(0.5 * 0.75), abs=1e-12)
    assert value == pytest.approx(0.6124, abs=1e-4)


def test_g_sser_accepts_scenario_object():
    class Scen:
        shift_set = (0,)

    scores = np.array([[3.0, 1.0, 2.0], [1.0, 3.0, 2.0]])
    assert g_sser(AttributionMatrix(scores, "mean-nll", "coalitional"), Scen())[1] == g_sser(scores, (0,))[1]


def test_top_i_labels():
    assert top_i_labels([[0.8, 0.1, 0.2]], 2).tolist() == [[1, 0, 1]]


def test_seqi_examples():
    assert seqi(1, 1) == 1.0
    assert seqi(0, 0) == 0.0
    assert seqi(0.8, 0.6) == pytest.approx(0.7, abs=1e-12)
    assert seqi(None, 0.6) is None
    assert seqi(0.8, 0.6, 1.0, 0.0) == 0.8
    with pytest.raises(ValueError):
        seqi(0.5, 0.5, 0.7, 0.7)
    with pytest.raises(ValueError):
        seqi(0.5, 0.5, -0.5, 1.5)


def test_mcc_examples():
    assert mcc(ConfusionCounts(TP=4, TN=6, FP=0, FN=0)) == 1.0
    assert mcc(ConfusionCounts(1, 1, 1, 1)) == 0.0
    assert mcc(ConfusionCounts(TP=3, TN=2, FP=1, FN=1)) == pytest.approx(5 / 12, abs=1e-12)
    assert mcc_signed(ConfusionCounts(TP=0, TN=0, FP=2, FN=2)) == -1.0
    assert mcc(ConfusionCounts(TP=0, TN=0, FP=2, FN=2)) == 1.0
    assert mcc(ConfusionCounts(5, 0, 0, 0)) == 0.0


def test_group_pearson_examples():
    up = np.linspace(0, 1, 10)
    assert group_pearson(np.column_stack([up, up]), (0,)) == pytest.approx(1.0)
    assert group_pearson(np.column_stack([up, -up]), (0,)) == pytest.approx(-1.0)
    scores = np.column_stack([[1, 2, 3], [1, 2, 4]]).astype(float)
    assert group_pearson(scores, (0,)) == pytest.approx(0.9820, abs=1e-4)
    with pytest.raises(ValueError):
        group_pearson(scores, (0, 1))


def test_group_pearson_averages_within_groups():
    rng = np.random.default_rng(0)
    s = rng.random((20, 4))
    expected = pearson_direct(s[:, [1, 3]].mean(axis=1), s[:, [0, 2]].mean(axis=1))
    assert group_pearson(s, (1, 3)) == pytest.approx(expected, abs=1e-12)


def test_group_pearson_ignores_rounding_noise_in_flat_curve():
    # columns 1..5 average to a constant; summation order only changes rounding
    s = np.vstack([np.array([[1.0, 2, 0, 1, 0, 0], [0, 0, 0, 0, 0, 3]]) + np.arange(6) * 1e-3] * 3)
    assert group_pearson(s, (0,)) == 0.0
    assert group_pearson(s[:, [0, 1, 2, 4, 3, 5]], (0,)) == 0.0
    assert pearson([1.0, 1.0 + 1e-15, 1.0], [0.0, 1.0, 2.0]) == 0.0
    assert pearson([1.0, 1.0 + 1e-9, 1.0], [0.0, 1.0, 0.0]) == pytest.approx(1.0)


# -- randomized oracle agreement ------------------------------------------------------

@st.composite
def scenarios(draw):
    n = draw(st.integers(1, 6))
    k = draw(st.integers(2, 6))
    scores = draw(arrays(np.float64, (n, k), elements=st.integers(0, 4).map(float)))
    shift = draw(st.sets(st.integers(0, k - 1), min_size=1, max_size=k - 1))
    return scores, tuple(sorted(shift))


@given(scenarios())
def test_confusion_matches_recount(case):
    scores, shift = case
    counts = ranking_confusion(scores, shift)
    assert (counts.TP, counts.TN, counts.FP, counts.FN) == confusion_recount(scores, shift)
    assert counts.total == scores.size
    assert mcc(counts) == pytest.approx(abs(mcc_direct(*confusion_recount(scores, shift))), abs=1e-12)


@given(scenarios(), st.permutations(range(6)))
def test_scores_symmetric_under_sensor_relabelling(case, perm):
    scores, shift = case
    n, k = scores.shape
    scores = scores + np.arange(k) * 1e-3  # distinct values, so index tie-breaks cannot matter
    perm = [p for p in perm if p < k]
    y = np.linspace(0, 1, n)
    if n < 3:
        scores = np.vstack([scores] * 3)
        y = np.linspace(0, 1, scores.shape[0])
    attr = AttributionMatrix(scores, "mean-nll", "centralised")
    moved = AttributionMatrix(scores[:, perm], "mean-nll", "centralised")
    new_shift = tuple(perm.index(s) for s in shift)
    a, b = evaluate(attr, shift, y), evaluate(moved, new_shift, y)
    for name in ("g_sdc", "g_sser", "seqi", "mcc", "pearson"):
        assert getattr(a, name) == pytest.approx(getattr(b, name), abs=1e-12)


@given(arrays(np.float64, (8, 3), elements=st.floats(0.01, 10), unique=True))
def test_g_sser_invariant_under_monotone_transform(scores):
    assert g_sser(np.log(scores), (1,))[1] == g_sser(scores, (1,))[1]


# -- full evaluation -------------------------------------------------------------------------

def test_evaluate_ideal_attribution():
    n = 40
    y = np.linspace(0, 1, n)
    rng = np.random.default_rng(0)
    scores = np.column_stack([1 + 5 * y, 0.5 + 0.01 * rng.random(n), 0.5 + 0.01 * rng.random(n)])
    rep = evaluate(AttributionMatrix(scores, "mean-nll", "coalitional"), (0,), y)
    assert rep.rho[0] == 1.0
    assert rep.g_sser == 1.0 and rep.mcc == 1.0
    assert 0.9 < rep.g_sdc <= 1.0
    assert rep.seqi == pytest.approx(0.5 * rep.g_sdc + 0.5)
    d = rep.to_dict()
    assert d["shift_set"] == [0] and d["counts"]["TP"] == n


def test_evaluate_degenerate_scenario_reports_absent():
    y = np.linspace(0, 1, 5)
    rep = evaluate(AttributionMatrix(np.random.default_rng(0).random((5, 2)), "mean-nll", "centralised"), (0, 1), y)
    assert rep.g_sdc is None and rep.g_sser is None and rep.seqi is None and rep.pearson is None


@given(arrays(np.float64, (10, 4), elements=st.floats(0, 100)), st.sets(st.integers(0, 3), min_size=1, max_size=3))
@settings(max_examples=50)
def test_scores_in_unit_range(scores, shift):
    rep = evaluate(AttributionMatrix(scores, "var-nll", "centralised"), shift, np.linspace(0, 1, 10))
    for v in (rep.g_sdc, rep.g_sser, rep.seqi, rep.mcc):
        assert 0.0 <= v <= 1.0
    assert -1.0 <= rep.pearson <= 1.0
    assert all(0.0 <= r <= 1.0 for r in rep.rho)

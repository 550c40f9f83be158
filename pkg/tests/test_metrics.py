import numpy as np
import pytest

from biopsynet.metrics import (confusion, evaluate, macro_average_roc,
                               micro_average_roc, roc_curve, summary)

from oracles import pair_auc, tally_confusion

RNG = np.random.default_rng(77)


# ---------------------------------------------------------------------------
# confusion matrix


def test_all_correct_is_diagonal():
    labels = [0, 1, 2, 0, 1, 2]
    matrix = confusion(labels, labels)
    assert np.array_equal(matrix, np.diag([2, 2, 2]))


def test_single_misclassification():
    # one CD (class 1) predicted as EE (class 0)
    matrix = confusion([1], [0])
    assert matrix[1][0] == 1
    assert matrix.sum() == 1


def test_confusion_matches_hand_tally():
    true = RNG.integers(0, 3, size=30)
    pred = RNG.integers(0, 3, size=30)
    matrix = confusion(true, pred)
    assert matrix.tolist() == tally_confusion(true.tolist(), pred.tolist(), 3)
    assert matrix.sum() == 30


def test_length_mismatch_errors():
    with pytest.raises(ValueError, match="length mismatch"):
        confusion([0, 1], [0])


# ---------------------------------------------------------------------------
# summary


def test_perfect_predictions_all_ones():
    s = summary(np.diag([5, 7, 9]))
    assert s.accuracy == 1.0
    assert np.all(s.precision == 1.0)
    assert np.all(s.recall == 1.0)
    assert np.all(s.f1 == 1.0)
    assert s.micro_f1 == 1.0 and s.macro_f1 == 1.0


def test_hand_computed_point_nine_precision():
    # class 0: TP=9, FP=1 -> precision 0.9; FN=1 -> recall 0.9 -> F1 0.9
    matrix = np.array([[9, 1, 0],
                       [1, 5, 0],
                       [0, 0, 4]])
    s = summary(matrix)
    assert abs(s.precision[0] - 0.9) < 1e-12
    assert abs(s.recall[0] - 0.9) < 1e-12
    assert abs(s.f1[0] - 0.9) < 1e-12
    assert s.support.tolist() == [10, 6, 4]
    assert abs(s.accuracy - 18 / 20) < 1e-12


def test_zero_denominator_flagged():
    # class 2 never predicted and never true
    matrix = np.array([[3, 0, 0],
                       [0, 2, 0],
                       [0, 0, 0]])
    with pytest.warns(RuntimeWarning, match="zero denominator"):
        s = summary(matrix)
    assert s.precision[2] == 0.0
    assert s.recall[2] == 0.0
    assert "precision[2]" in s.zero_division_flags


@pytest.mark.filterwarnings("ignore:zero denominator")
def test_micro_precision_equals_accuracy():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 40))
        matrix = confusion(rng.integers(0, 3, size=n), rng.integers(0, 3, size=n))
        s = summary(matrix)
        assert abs(s.micro_precision - s.accuracy) < 1e-12
        assert abs(s.micro_recall - s.accuracy) < 1e-12


def test_empty_matrix_errors():
    with pytest.raises(ValueError, match="empty"):
        summary(np.zeros((3, 3), dtype=int))


def test_metrics_invariant_under_class_permutation():
    true = RNG.integers(0, 3, size=40)
    pred = RNG.integers(0, 3, size=40)
    s = summary(confusion(true, pred))
    perm = np.array([2, 0, 1])
    s_perm = summary(confusion(perm[true], perm[pred]))
    assert abs(s.accuracy - s_perm.accuracy) < 1e-12
    assert abs(s.macro_f1 - s_perm.macro_f1) < 1e-12
    for c in range(3):
        assert abs(s.precision[c] - s_perm.precision[perm[c]]) < 1e-12
        assert abs(s.recall[c] - s_perm.recall[perm[c]]) < 1e-12


# ---------------------------------------------------------------------------
# ROC / AUC


def _scores_for(labels, positive, pos_scores, neg_scores):
    scores = np.zeros((len(labels), 3))
    pos_it = iter(pos_scores)
    neg_it = iter(neg_scores)
    for i, lab in enumerate(labels):
        scores[i, positive] = next(pos_it) if lab == positive else next(neg_it)
    return scores


def test_perfect_separation_auc_one():
    labels = [1, 1, 1, 0, 0, 0]
    scores = _scores_for(labels, 1, [0.9, 0.8, 0.7], [0.3, 0.2, 0.1])
    curve = roc_curve(labels, scores, positive_class=1)
    assert curve.auc == 1.0
    assert curve.fpr[0] == 0.0 and curve.tpr[0] == 0.0
    assert curve.fpr[-1] == 1.0 and curve.tpr[-1] == 1.0


def test_identical_scores_auc_half():
    labels = [0, 0, 1, 1]
    scores = np.full((4, 3), 0.5)
    curve = roc_curve(labels, scores, positive_class=1)
    assert abs(curve.auc - 0.5) < 1e-12


def test_auc_matches_pair_counting_oracle():
    labels = RNG.integers(0, 2, size=12).tolist()
    while len(set(labels)) < 2:
        labels = RNG.integers(0, 2, size=12).tolist()
    raw = RNG.random(12)
    scores = np.zeros((12, 3))
    scores[:, 1] = raw
    curve = roc_curve(labels, scores, positive_class=1)
    want = pair_auc([l == 1 for l in labels], raw.tolist())
    assert abs(curve.auc - want) < 1e-12


def test_auc_matches_oracle_with_ties():
    labels = [0, 1, 0, 1, 0, 1, 1, 0]
    raw = np.array([0.2, 0.2, 0.5, 0.5, 0.1, 0.9, 0.5, 0.7])
    scores = np.zeros((8, 3))
    scores[:, 2] = raw
    labels2 = [2 if l else 0 for l in labels]
    curve = roc_curve(labels2, scores, positive_class=2)
    want = pair_auc([l == 2 for l in labels2], raw.tolist())
    assert abs(curve.auc - want) < 1e-12


def test_curve_monotone_and_threshold_sentinel():
    labels = RNG.integers(0, 2, size=20)
    scores = np.zeros((20, 3))
    scores[:, 1] = RNG.random(20)
    curve = roc_curve(labels.tolist(), scores, positive_class=1)
    assert curve.thresholds[0] == np.inf
    assert np.all(np.diff(curve.thresholds[1:]) < 0)  # strictly descending
    assert np.all(np.diff(curve.fpr) >= 0)
    assert np.all(np.diff(curve.tpr) >= 0)


def test_single_class_labels_error():
    scores = np.zeros((3, 3))
    with pytest.raises(ValueError, match="positive and negative"):
        roc_curve([1, 1, 1], scores, positive_class=1)


def test_nonfinite_scores_error():
    scores = np.zeros((2, 3))
    scores[0, 0] = np.nan
    with pytest.raises(ValueError, match="finite"):
        roc_curve([0, 1], scores, positive_class=0)


def test_micro_average_pools_all_pairs():
    labels = [0, 1, 2, 0]
    scores = RNG.random((4, 3))
    curve = micro_average_roc(labels, scores)
    indicators = []
    pooled = []
    for c in range(3):
        indicators.extend([l == c for l in labels])
        pooled.extend(scores[:, c].tolist())
    assert abs(curve.auc - pair_auc(indicators, pooled)) < 1e-12


def test_macro_average_on_shared_grid():
    labels = RNG.integers(0, 3, size=30).tolist()
    scores = RNG.random((30, 3))
    curve = macro_average_roc(labels, scores)
    assert len(curve.fpr) == 101
    assert curve.fpr[0] == 0.0 and curve.fpr[-1] == 1.0
    assert curve.tpr[0] == 0.0
    per_class = [roc_curve(labels, scores, c).auc for c in range(3)]
    # mean-curve AUC sits in the per-class AUC envelope
    assert min(per_class) - 0.05 <= curve.auc <= max(per_class) + 0.05


def test_evaluate_end_to_end_report():
    labels = RNG.integers(0, 3, size=25).tolist()
    scores = RNG.random((25, 3))
    scores /= scores.sum(axis=1, keepdims=True)
    report = evaluate(labels, scores)
    assert report.matrix.sum() == 25
    assert len(report.per_class_roc) == 3
    assert 0.0 <= report.micro_roc.auc <= 1.0
    assert 0.0 <= report.macro_roc.auc <= 1.0

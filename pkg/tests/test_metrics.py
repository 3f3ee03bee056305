from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import roc_auc_score

from fabricfl.metrics import (
    ConfusionMatrix,
    confusion,
    evaluate_scores,
    roc_auc,
    summarize,
)


def oracle_summary(cm: ConfusionMatrix):
    """Re-derivation from the definitions, entirely in exact rationals."""

    def ratio(num, den):
        return Fraction(num, den) if den else Fraction(0)

    accuracy = ratio(cm.tp + cm.tn, cm.total)
    p1, r1 = ratio(cm.tp, cm.tp + cm.fp), ratio(cm.tp, cm.tp + cm.fn)
    p0, r0 = ratio(cm.tn, cm.tn + cm.fn), ratio(cm.tn, cm.tn + cm.fp)

    def harmonic(p, r):
        return 2 * p * r / (p + r) if p + r else Fraction(0)

    return accuracy, {1: p1, 0: p0}, {1: r1, 0: r0}, (harmonic(p1, r1) + harmonic(p0, r0)) / 2


def oracle_auc(scores, labels):
    """Mann-Whitney pair counting: P(random positive outscores random negative)."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = Fraction(0)
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1
            elif p == n:
                wins += Fraction(1, 2)
    return wins / (len(pos) * len(neg))


class TestConfusion:
    def test_hand_counted(self):
        cm = confusion([1, 0, 1, 1], [1, 0, 0, 1])
        assert (cm.tp, cm.tn, cm.fp, cm.fn) == (2, 1, 1, 0)

    def test_perfect_classifier(self):
        cm = confusion([1, 0, 1], [1, 0, 1])
        assert cm.fp == cm.fn == 0

    def test_inverted_classifier(self):
        labels = [1, 0, 1, 0]
        cm = confusion([0, 1, 0, 1], labels)
        assert cm.tp == cm.tn == 0

    def test_total_matches_sample_count(self):
        cm = confusion([1, 1, 0, 0, 1], [0, 1, 0, 1, 1])
        assert cm.total == 5

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            confusion([1, 0], [1])

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            confusion([1, 2], [1, 0])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            confusion([], [])


class TestSummarize:
    def test_worked_example(self):
        summary = summarize(ConfusionMatrix(tp=2, tn=1, fp=1, fn=0))
        assert summary.accuracy == 0.75
        assert summary.precision[1] == pytest.approx(2 / 3)
        assert summary.recall[1] == 1.0

    def test_perfect_matrix(self):
        summary = summarize(ConfusionMatrix(tp=3, tn=4, fp=0, fn=0))
        assert summary.accuracy == 1.0
        assert summary.precision == {1: 1.0, 0: 1.0}
        assert summary.recall == {1: 1.0, 0: 1.0}
        assert summary.f1_macro == 1.0

    def test_zero_over_zero_is_zero(self):
        summary = summarize(ConfusionMatrix(tp=0, tn=5, fp=0, fn=0))
        assert summary.precision[1] == 0.0
        assert summary.recall[1] == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            summarize(ConfusionMatrix(0, 0, 0, 0))

    def test_matches_rational_oracle_exactly(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            tp, tn, fp, fn = (int(v) for v in rng.integers(0, 7, size=4))
            if tp + tn + fp + fn == 0:
                continue
            cm = ConfusionMatrix(tp=tp, tn=tn, fp=fp, fn=fn)
            summary = summarize(cm)
            accuracy, precision, recall, f1 = oracle_summary(cm)
            assert summary.accuracy == float(accuracy)
            assert summary.precision == {k: float(v) for k, v in precision.items()}
            assert summary.recall == {k: float(v) for k, v in recall.items()}
            assert summary.f1_macro == float(f1)


class TestRocAuc:
    def test_perfect_separation(self):
        points, auc = roc_auc([0.1, 0.9], [0, 1])
        assert auc == 1.0
        assert points[0] == (0.0, 0.0) and points[-1] == (1.0, 1.0)

    def test_perfectly_inverted(self):
        _, auc = roc_auc([0.9, 0.1], [0, 1])
        assert auc == 0.0

    def test_all_scores_equal(self):
        points, auc = roc_auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1])
        assert auc == 0.5
        assert points == [(0.0, 0.0), (1.0, 1.0)]

    def test_monotone_curve(self):
        rng = np.random.default_rng(2)
        scores = rng.uniform(size=30)
        labels = rng.integers(0, 2, size=30)
        if labels.sum() in (0, 30):
            labels[0] = 1 - labels[0]
        points, _ = roc_auc(scores, labels)
        fprs = [p[0] for p in points]
        tprs = [p[1] for p in points]
        assert fprs == sorted(fprs)
        assert tprs == sorted(tprs)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            roc_auc([0.2, 0.8], [1, 1])

    def test_matches_pair_counting_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n = int(rng.integers(4, 30))
            scores = np.round(rng.uniform(size=n), 2)  # rounding forces ties
            labels = rng.integers(0, 2, size=n)
            if labels.sum() in (0, n):
                labels[0] = 1 - labels[0]
            _, auc = roc_auc(scores, labels)
            assert auc == pytest.approx(float(oracle_auc(scores, labels)), abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(
            st.tuples(st.floats(0, 1, allow_nan=False), st.integers(0, 1)),
            min_size=2,
            max_size=50,
        )
    )
    def test_mann_whitney_property(self, pairs):
        scores = [s for s, _ in pairs]
        labels = [l for _, l in pairs]
        if sum(labels) in (0, len(labels)):
            labels[0] = 1 - labels[0]
        _, auc = roc_auc(scores, labels)
        assert auc == pytest.approx(float(oracle_auc(scores, labels)), abs=1e-12)

    def test_label_swap_and_score_negation_symmetries(self):
        # Each transform alone flips the AUC; applying both restores it.
        rng = np.random.default_rng(4)
        scores = rng.uniform(size=40)
        labels = rng.integers(0, 2, size=40)
        labels[0], labels[1] = 0, 1
        _, auc = roc_auc(scores, labels)
        _, label_swapped = roc_auc(scores, 1 - labels)
        assert label_swapped == pytest.approx(1.0 - auc, abs=1e-12)
        _, negated = roc_auc(-scores, labels)
        assert negated == pytest.approx(1.0 - auc, abs=1e-12)
        _, both = roc_auc(-scores, 1 - labels)
        assert both == pytest.approx(auc, abs=1e-12)

    def test_against_sklearn(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            scores = rng.normal(size=25)
            labels = rng.integers(0, 2, size=25)
            if labels.sum() in (0, 25):
                labels[0] = 1 - labels[0]
            _, auc = roc_auc(scores, labels)
            assert auc == pytest.approx(roc_auc_score(labels, scores), abs=1e-12)


class TestEvalReport:
    def test_integration(self):
        scores = np.array([0.9, 0.8, 0.3, 0.2])
        labels = np.array([1, 1, 0, 0])
        report = evaluate_scores(scores, labels)
        assert report.accuracy == 1.0
        assert report.auc == 1.0
        assert report.roc_points[0] == (0.0, 0.0)

    def test_json_deterministic(self):
        scores = np.array([0.7, 0.4, 0.6, 0.1])
        labels = np.array([1, 0, 1, 0])
        a = evaluate_scores(scores, labels).to_json()
        b = evaluate_scores(scores, labels).to_json()
        assert a == b
        assert '"accuracy"' in a

    def test_roc_csv_format(self, tmp_path):
        report = evaluate_scores(np.array([0.9, 0.1]), np.array([1, 0]))
        path = tmp_path / "roc.csv"
        report.write_roc_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "fpr,tpr"
        assert len(lines) == 1 + len(report.roc_points)

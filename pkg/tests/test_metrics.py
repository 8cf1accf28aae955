import numpy as np
import pytest
from sklearn.metrics import average_precision_score, roc_auc_score

from creinn.metrics import ar_curve, auroc, average_precision, ood_detect, relative_increase

from oracles import brute_ar_curve, pairwise_auroc


class TestArCurve:
    def test_three_sample_example(self):
        c = ar_curve([0.9, 0.1, 0.5], [0, 1, 1])
        assert c.rejection_rate.tolist() == [0, 1 / 3, 2 / 3]
        assert c.accuracy.tolist() == [2 / 3, 1.0, 1.0]

    def test_all_correct(self):
        c = ar_curve(np.random.default_rng(0).random(20), np.ones(20))
        assert np.all(c.accuracy == 1.0) and c.auarc == 1.0

    def test_perfect_ordering_is_monotone(self):
        correct = np.random.default_rng(1).random(50) < 0.7
        c = ar_curve(1.0 - correct, correct)
        assert np.all(np.diff(c.accuracy) >= 0)

    def test_ties_keep_original_order(self):
        c = ar_curve([0.5, 0.5, 0.5], [0, 1, 1])
        assert c.accuracy.tolist() == [2 / 3, 1.0, 1.0]
        c = ar_curve([0.5, 0.5, 0.5], [1, 1, 0])
        assert c.accuracy.tolist() == [2 / 3, 0.5, 0.0]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            n = int(rng.integers(1, 30))
            u = rng.integers(0, 5, n) / 4.0
            correct = rng.random(n) < 0.6
            c = ar_curve(u, correct)
            rate, acc = brute_ar_curve(u, correct)
            assert np.allclose(c.rejection_rate, rate) and np.allclose(c.accuracy, acc, rtol=1e-14)

    def test_auarc_normalized_trapezoid(self):
        c = ar_curve([0.9, 0.1, 0.5], [0, 1, 1])
        # trapezoid over [0, 2/3] of (2/3, 1, 1), divided by 2/3
        assert c.auarc == pytest.approx(((2 / 3 + 1) / 2 * (1 / 3) + 1 / 3) / (2 / 3))
        assert 0 <= c.auarc <= 1

    def test_single_sample(self):
        assert ar_curve([0.3], [1]).auarc == 1.0

    def test_errors(self):
        with pytest.raises(ValueError):
            ar_curve([], [])
        with pytest.raises(ValueError):
            ar_curve([0.1, 0.2], [1])


class TestOodScores:
    def test_perfect_separation(self):
        assert ood_detect([0.1, 0.2], [0.3, 0.4]) == (1.0, 1.0)

    def test_constant_scores(self):
        assert ood_detect([0.5] * 4, [0.5] * 3)[0] == 0.5

    def test_four_sample_example(self):
        assert auroc([0.1, 0.4], [0.3, 0.5]) == 0.75

    def test_matches_pairwise_wins(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a = rng.integers(0, 8, int(rng.integers(1, 100))) / 7
            b = rng.integers(0, 8, int(rng.integers(1, 100))) / 7
            assert auroc(a, b) == pytest.approx(pairwise_auroc(a, b), abs=1e-12)

    def test_matches_sklearn(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            scores = np.round(rng.random(60), 1)
            labels = (rng.random(60) < 0.4).astype(int)
            labels[:2] = [0, 1]
            assert average_precision(scores, labels) == pytest.approx(average_precision_score(labels, scores), abs=1e-12)
            u_id, u_ood = scores[labels == 0], scores[labels == 1]
            assert auroc(u_id, u_ood) == pytest.approx(roc_auc_score(labels, scores), abs=1e-12)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(5)
        u_id, u_ood = rng.random(40), rng.random(30) + 0.2
        correct = rng.random(40) < 0.5
        for f in (np.exp, lambda x: 3 * x + 1, np.sqrt):
            assert ood_detect(f(u_id), f(u_ood)) == ood_detect(u_id, u_ood)
            assert ar_curve(f(u_id), correct).auarc == ar_curve(u_id, correct).auarc

    def test_ranges(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            a, b = ood_detect(rng.random(10), rng.random(12))
            assert 0 <= a <= 1 and 0 < b <= 1

    def test_empty_side(self):
        with pytest.raises(ValueError):
            ood_detect([], [0.1])


class TestRelativeIncrease:
    def test_single_value(self):
        r = relative_increase({"base": [0.2], "hi": [0.4]}, "base")
        assert r.ratios == {"base": 1.0, "hi": 2.0}

    def test_mean_of_run_means(self):
        r = relative_increase({"b": [[1.0, 2.0], [1.0, 1.0]], "x": [[1.0, 4.0], [2.5, 2.5]]}, "b")
        assert r.ratios["x"] == pytest.approx(2.0)

    def test_tiny_baselines_excluded(self):
        r = relative_increase({"b": [1e-12, 0.5], "x": [1.0, 1.0]}, "b")
        assert r.excluded == 1 and r.ratios["x"] == 2.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            relative_increase({"b": [1.0, 2.0], "x": [1.0]}, "b")

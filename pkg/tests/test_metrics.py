import numpy as np
import pytest
from hypothesis import given, strategies as st

from embclust.metrics import MetricsReport, bcubed_f, compute_all, nmi, pairwise_f

from .oracles import bcubed_oracle, nmi_oracle, pairwise_oracle

partitions = st.lists(st.integers(min_value=0, max_value=5), min_size=2, max_size=40)


class TestPairwise:
    def test_perfect(self):
        assert pairwise_f([0, 0, 1], [5, 5, 9]) == (1.0, 1.0, 1.0)

    def test_singletons_vs_pairs(self):
        p, r, f = pairwise_f([0, 1, 2, 3], [0, 0, 1, 1])
        assert (p, r, f) == (1.0, 0.0, 0.0)

    def test_hand_case(self):
        # pred {a,b | c,d} vs truth {a,b,c | d}: TP=1, FP=1, FN=2
        p, r, f = pairwise_f([0, 0, 1, 1], [0, 0, 0, 1])
        assert p == pytest.approx(0.5)
        assert r == pytest.approx(1 / 3)
        assert f == pytest.approx(0.4)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            pairwise_f([0, 1], [0, 1, 2])


class TestBCubed:
    def test_perfect(self):
        assert bcubed_f([2, 2, 7], [0, 0, 1]) == (1.0, 1.0, 1.0)

    def test_singletons_vs_two_pairs(self):
        p, r, f = bcubed_f([0, 1, 2, 3], [0, 0, 1, 1])
        assert p == pytest.approx(1.0)
        assert r == pytest.approx(0.5)
        assert f == pytest.approx(2 / 3)

    def test_one_big_cluster_vs_two_pairs(self):
        p, r, f = bcubed_f([0, 0, 0, 0], [0, 0, 1, 1])
        assert p == pytest.approx(0.5)
        assert r == pytest.approx(1.0)
        assert f == pytest.approx(2 / 3)


class TestNmi:
    def test_identical_up_to_relabeling(self):
        assert nmi([0, 0, 1, 2], [7, 7, 3, 5]) == 1.0

    def test_single_cluster_pred(self):
        assert nmi([0, 0, 0, 0], [0, 0, 1, 1]) == 0.0

    def test_independent_partitions(self):
        # pred {a,b | c,d} vs truth {a,c | b,d}: all contingency cells 1/4
        assert nmi([0, 0, 1, 1], [0, 1, 0, 1]) == 0.0

    def test_all_singletons_both(self):
        assert nmi([0, 1, 2], [5, 6, 7]) == 1.0


class TestAgainstOracles:
    def test_random_partitions(self, rng):
        for _ in range(200):
            n = int(rng.integers(2, 100))
            pred = rng.integers(0, max(2, n // 3), size=n).tolist()
            truth = rng.integers(0, max(2, n // 4), size=n).tolist()
            p = pairwise_f(pred, truth)
            b = bcubed_f(pred, truth)
            m = nmi(pred, truth)
            po = pairwise_oracle(pred, truth)
            bo = bcubed_oracle(pred, truth)
            mo = nmi_oracle(pred, truth)
            for got, want in zip(p, po):
                assert got == pytest.approx(want, abs=1e-12)
            for got, want in zip(b, bo):
                assert got == pytest.approx(want, abs=1e-12)
            assert m == pytest.approx(mo, abs=1e-12)


class TestProperties:
    @given(partitions, st.integers(0, 10_000))
    def test_relabel_invariance(self, part, seed):
        rng = np.random.default_rng(seed)
        truth = rng.integers(0, 4, size=len(part)).tolist()
        perm = rng.permutation(6).tolist()
        relabeled = [perm[x] for x in part]
        assert pairwise_f(part, truth) == pairwise_f(relabeled, truth)
        assert bcubed_f(part, truth) == bcubed_f(relabeled, truth)
        assert nmi(part, truth) == nmi(relabeled, truth)

    @given(partitions, partitions)
    def test_ranges_and_harmonic_bound(self, pred, truth):
        n = min(len(pred), len(truth))
        pred, truth = pred[:n], truth[:n]
        for p, r, f in (pairwise_f(pred, truth), bcubed_f(pred, truth)):
            assert 0 <= p <= 1 and 0 <= r <= 1
            assert f <= (p + r) / 2 + 1e-12
        assert 0 <= nmi(pred, truth) <= 1


class TestReport:
    def test_json_shape(self):
        report = compute_all([0, 0, 1], [0, 0, 1])
        data = report.as_dict()
        assert data == {
            "pairwise": {"p": 1.0, "r": 1.0, "f": 1.0},
            "bcubed": {"p": 1.0, "r": 1.0, "f": 1.0},
            "nmi": 1.0,
        }
        assert report.to_json().endswith("\n")

    def test_six_decimals(self):
        report = MetricsReport(pairwise=(1 / 3, 2 / 3, 0.123456789),
                               bcubed=(0.1, 0.2, 0.15), nmi=0.9999999)
        data = report.as_dict()
        assert data["pairwise"]["f"] == 0.123457
        assert data["nmi"] == 1.0

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rmgd.descriptor import Descriptor, GroupLayout
from rmgd.errors import DataError
from rmgd.match_eval import (
    RocCurve,
    ScoredPairs,
    WeightedHamming,
    fpr_at_recall,
    nn_match,
    results_table_csv,
    roc,
)


def brute_roc(d, y):
    pos, neg = (y == 1).sum(), (y == 0).sum()
    th = np.unique(d)
    tpr = np.array([((d <= t) & (y == 1)).sum() / pos for t in th])
    fpr = np.array([((d <= t) & (y == 0)).sum() / neg for t in th])
    return th, tpr, fpr


def brute_fpr(d, y, recall):
    th, tpr, fpr = brute_roc(d, y)
    for t, a, b in zip(th, tpr, fpr):
        if a >= recall:
            return b
    raise AssertionError("unreachable: the last threshold has tpr 1")


def random_scored(rng, n=None):
    n = n or int(rng.integers(2, 51))
    y = rng.integers(0, 2, n)
    y[0], y[1] = 0, 1
    d = rng.integers(0, 12, n).astype(float)
    return ScoredPairs(d, y)


def layout_of(lengths):
    lengths = np.asarray(lengths)
    return GroupLayout(lengths, np.concatenate([[0], np.cumsum((lengths + 7) // 8)]))


class TestRoc:
    def test_oracle_random(self, rng):
        for _ in range(200):
            sp = random_scored(rng)
            th, tpr, fpr = brute_roc(sp.distance, sp.label)
            c = roc(sp)
            assert np.array_equal(c.threshold, th)
            assert np.array_equal(c.tpr, tpr) and np.array_equal(c.fpr, fpr)
            for r in (0.5, 0.95, 1.0):
                assert fpr_at_recall(sp, r) == brute_fpr(sp.distance, sp.label, r)

    def test_perfect_separation(self):
        sp = ScoredPairs([0, 1, 5, 6], [1, 1, 0, 0])
        assert fpr_at_recall(sp) == 0.0

    def test_shuffled_labels_near_diagonal(self, rng):
        d = rng.random(20000)
        sp = ScoredPairs(d, rng.integers(0, 2, 20000))
        assert fpr_at_recall(sp) == pytest.approx(0.95, abs=0.02)

    def test_all_ties(self):
        sp = ScoredPairs([3, 3, 3], [1, 0, 0])
        c = roc(sp)
        assert c.tpr.tolist() == [1.0] and c.fpr.tolist() == [1.0]
        assert fpr_at_recall(sp) == 1.0

    def test_curve_lookup_and_csv(self):
        c = roc(ScoredPairs([1, 2, 2, 4], [1, 0, 1, 0]))
        assert c.at(0.5) == (0.0, 0.0)
        assert c.at(2) == (1.0, 0.5)
        assert c.to_csv().splitlines()[0] == "threshold,tpr,fpr"

    def test_errors(self):
        with pytest.raises(DataError):
            roc(ScoredPairs([1, 2], [1, 1]))
        with pytest.raises(DataError):
            ScoredPairs([np.nan], [1])
        with pytest.raises(ValueError):
            fpr_at_recall(ScoredPairs([1, 2], [0, 1]), 0.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 1)), min_size=2, max_size=50),
       st.floats(0.01, 1.0))
def test_fpr_property(rows, recall):
    d = np.array([r[0] for r in rows], dtype=float)
    y = np.array([r[1] for r in rows])
    if y.min() == y.max():
        return
    sp = ScoredPairs(d, y)
    assert fpr_at_recall(sp, recall) == brute_fpr(d, y, recall)
    c = roc(sp)
    assert np.all(np.diff(c.tpr) >= 0) and np.all(np.diff(c.fpr) >= 0)
    assert c.tpr[-1] == 1.0 and c.fpr[-1] == 1.0


class TestWeightedHamming:
    @pytest.mark.parametrize("lengths", [[32] * 13, [256, 256], [5, 13, 8], [64] * 3])
    def test_bitcount_oracle(self, rng, lengths):
        lay = layout_of(lengths)
        W = rng.uniform(0, 2, len(lengths))
        W[0] = 0.0
        A = rng.integers(0, 256, (30, lay.n_bytes), dtype=np.uint8)
        B = rng.integers(0, 256, (30, lay.n_bytes), dtype=np.uint8)
        wh = WeightedHamming(lay, W)
        got = wh(wh.prepare(A), wh.prepare(B))
        for i in range(30):
            ref = sum(W[m] * bin(int.from_bytes((A[i, s:e] ^ B[i, s:e]).tobytes(), "big")).count("1")
                      for m, (s, e) in enumerate(zip(lay.byte_offsets[:-1], lay.byte_offsets[1:])))
            assert got[i] == pytest.approx(ref)

    def test_word_width(self):
        assert WeightedHamming(layout_of([32] * 104), np.ones(104)).word == 4
        assert WeightedHamming(layout_of([256] * 2), np.ones(2)).word == 8
        assert WeightedHamming(layout_of([5, 8]), np.ones(2)).word == 1

    def test_all_zero_weights(self, rng):
        lay = layout_of([16, 16])
        wh = WeightedHamming(lay, [0.0, 0.0])
        A = rng.integers(0, 256, (3, 4), dtype=np.uint8)
        assert np.array_equal(wh(wh.prepare(A), wh.prepare(A[::-1])), np.zeros(3))

    def test_bad_weights(self):
        with pytest.raises(DataError):
            WeightedHamming(layout_of([8]), [-1.0])
        with pytest.raises(DataError):
            WeightedHamming(layout_of([8]), [1.0, 1.0])


class TestNearestNeighbour:
    def test_double_loop_oracle(self, rng):
        lay = layout_of([16, 8, 24])
        W = np.array([1.0, 0.5, 2.0])
        Q = [Descriptor(rng.integers(0, 256, lay.n_bytes, dtype=np.uint8), lay) for _ in range(12)]
        T = [Descriptor(rng.integers(0, 256, lay.n_bytes, dtype=np.uint8), lay) for _ in range(9)]
        T.append(Descriptor(T[2].data.copy(), lay))  # duplicate: tie must go to index 2
        Q.append(Descriptor(T[2].data.copy(), lay))
        got = nn_match(Q, T, W)
        for i, q in enumerate(Q):
            dists = [sum(W[m] * int(np.unpackbits(q.group(m) ^ t.group(m)).sum()) for m in range(3)) for t in T]
            best = min(range(len(T)), key=lambda j: (dists[j], j))
            assert got[i][1] == best and got[i][2] == pytest.approx(dists[best])
        assert got[-1][1] == 2 and got[-1][2] == 0.0

    def test_empty(self):
        lay = layout_of([8])
        assert nn_match([], [Descriptor(np.zeros(1, np.uint8), lay)], [1.0]) == []
        with pytest.raises(DataError):
            nn_match([Descriptor(np.zeros(1, np.uint8), lay)], [], [1.0])


def test_results_table():
    text = results_table_csv([dict(train_set="a", test_set="b", n_groups=13, bits_per_group=256, fpr95=0.2)])
    assert text.splitlines() == ["train_set,test_set,n_groups,bits_per_group,fpr95", "a,b,13,256,0.2"]


def test_roc_curve_type():
    assert isinstance(roc(ScoredPairs([0, 1], [1, 0])), RocCurve)

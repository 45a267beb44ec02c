import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rmgd.bit_selection import (
    matching_errors,
    matching_errors_from_means,
    pair_prediction,
    pearson_correlation,
    prefilter,
    select_bits,
    select_map_bits,
    xor_correlation,
)
from rmgd.descriptor import BitCandidateMatrix, candidates_from_means, get_geometry
from rmgd.errors import DataError, ResourceCapError
from rmgd.ring_geometry import region_means


def packed_matrix(X, geom=None):
    X = np.asarray(X, dtype=bool)
    return BitCandidateMatrix(np.packbits(X, axis=1), X.shape[1], "Int", geom or get_geometry(16, 1))


def naive_select(X, pa, pb, y, n, t_c, folds, seed):
    """Loop-by-loop reference of the boosted selection with fold cycling and no reweight on rejection."""
    order = np.random.default_rng(seed).permutation(len(y))
    parts = [np.sort(p) for p in np.array_split(order, folds) if len(p)]
    fold = 0
    alive = set(range(len(X)))
    chosen, trace = [], []

    def fold_data(f):
        p = parts[f]
        return pa[p], pb[p], y[p], np.full(len(p), 1.0 / len(p))

    fa, fb, fy, d = fold_data(0)
    while len(chosen) < n and alive:
        eps = {}
        for c in sorted(alive):
            wrong = [(X[c, fa[i]] == X[c, fb[i]]) != bool(fy[i]) for i in range(len(fy))]
            eps[c] = sum(d[i] for i in range(len(fy)) if wrong[i])
        low = min(eps.values())
        best = min(c for c in eps if eps[c] <= low + 1e-12)
        best_eps = eps[best]
        alive.discard(best)
        rho = max([abs(pearson_correlation(X[best], X[c])) for c in chosen], default=0.0)
        admitted = rho < t_c
        if admitted:
            chosen.append(best)
        trace.append((best, admitted, fold))
        if best_eps < 0.5 and admitted:
            e = max(best_eps, 1e-6)
            alpha = 0.5 * math.log((1 - e) / e)
            wrong = np.array([(X[best, fa[i]] == X[best, fb[i]]) != bool(fy[i]) for i in range(len(fy))])
            d = d * np.exp(np.where(wrong, alpha, -alpha))
            d = d / d.sum()
        elif best_eps >= 0.5:
            fold = (fold + 1) % len(parts)
            fa, fb, fy, d = fold_data(fold)
    return chosen, trace


def planted_problem(n_cands=300, n_pairs=400, n_planted=5, eps=0.1, seed=0):
    """Pairs (2i, 2i+1); planted bits agree on matches and disagree on non-matches w.p. 1 - eps."""
    rng = np.random.default_rng(seed)
    y = (np.arange(n_pairs) % 4 == 0).astype(int)
    pa, pb = 2 * np.arange(n_pairs), 2 * np.arange(n_pairs) + 1
    X = np.empty((n_cands, 2 * n_pairs), dtype=bool)
    p = rng.uniform(0.1, 0.9, size=n_cands)
    X[:] = rng.random((n_cands, 2 * n_pairs)) < p[:, None]
    planted = rng.choice(n_cands, n_planted, replace=False)
    for c in planted:
        a = rng.random(n_pairs) < 0.5
        agree = np.where(y == 1, rng.random(n_pairs) > eps, rng.random(n_pairs) < eps)
        X[c, pa] = a
        X[c, pb] = np.where(agree, a, ~a)
    return X, pa, pb, y, np.sort(planted)


class TestPrimitives:
    def test_prediction(self):
        assert pair_prediction([0, 1, 1, 0], [0, 1, 0, 1]).tolist() == [1, 1, 0, 0]

    def test_errors_match_loop(self, rng):
        X = rng.random((20, 30)) < 0.5
        pa, pb = rng.integers(0, 30, 50), rng.integers(0, 30, 50)
        y = rng.integers(0, 2, 50)
        err, mean = matching_errors(packed_matrix(X), pa, pb, y)
        for c in range(20):
            ref = np.mean([int(X[c, a] == X[c, b]) != t for a, b, t in zip(pa, pb, y)])
            assert err[c] == pytest.approx(ref)
            assert mean[c] == pytest.approx(X[c].mean())

    def test_streamed_errors_equal_matrix_errors(self, rng):
        geom = get_geometry(16, 4)
        means = region_means(rng.uniform(size=(40, 16, 16)), geom)
        pa, pb, y = rng.integers(0, 40, 60), rng.integers(0, 40, 60), rng.integers(0, 2, 60)
        cands = BitCandidateMatrix(candidates_from_means(means, geom), 40, "Int", geom)
        e1, m1 = matching_errors(cands, pa, pb, y)
        e2, m2 = matching_errors_from_means(means, geom, pa, pb, y, chunk_elems=5000)
        assert np.array_equal(e1, e2) and np.array_equal(m1, m2)

    def test_bad_pairs(self):
        with pytest.raises(DataError):
            matching_errors(packed_matrix(np.zeros((2, 4))), [0], [9], [1])


class TestPrefilter:
    def test_two_stages(self):
        errors = np.array([0.1, 0.2, 0.3, 0.4, 0.05, 0.5, 0.6, 0.7])
        means = np.array([0.9, 0.5, 0.45, 0.5, 0.1, 0.5, 0.5, 0.5])
        # lowest-error half: 4, 0, 1, 2; closest to 1/2 among them: 1, 2
        assert prefilter(errors, means).tolist() == [1, 2]

    def test_ties_by_id(self):
        assert prefilter(np.zeros(8), np.full(8, 0.5)).tolist() == [0, 1]

    def test_tiny(self):
        assert prefilter([0.1, 0.2], [0.5, 0.5]).tolist() == [0, 1]


class TestCorrelation:
    def test_pearson_matches_numpy(self, rng):
        a, b = rng.random(100) < 0.4, rng.random(100) < 0.6
        assert pearson_correlation(a, b) == pytest.approx(np.corrcoef(a, b)[0, 1])

    def test_constant_is_maximal(self):
        assert pearson_correlation([1, 1, 1], [0, 1, 0]) == 1.0

    def test_xor_form(self):
        assert xor_correlation([1, 0, 1, 1], [1, 1, 0, 1]) == pytest.approx(2 / 3)
        assert xor_correlation([0, 0], [1, 1]) == 1.0


class TestSelectBits:
    def test_agrees_with_naive_reference(self):
        X, pa, pb, y, _ = planted_problem(n_cands=40, n_pairs=60, n_planted=4, seed=3)
        res = select_bits(packed_matrix(X), pa, pb, y, n=6, t_c=0.25, folds=2, seed=5)
        ref, trace = naive_select(X, pa, pb, y, 6, 0.25, 2, 5)
        assert res.selected == ref
        assert [(r.candidate, r.admitted, r.fold) for r in res.records] == trace

    def test_recovers_planted(self):
        X, pa, pb, y, planted = planted_problem(seed=1)
        res = select_bits(packed_matrix(X), pa, pb, y, n=5, t_c=0.25)
        assert sorted(res.selected) == planted.tolist()

    def test_correlation_gate(self):
        X, pa, pb, y, _ = planted_problem(seed=2)
        X[0] = X[1]
        res = select_bits(packed_matrix(X), pa, pb, y, n=10, t_c=0.25)
        rows = [X[c] for c in res.selected]
        for i in range(len(rows)):
            for j in range(i):
                assert abs(pearson_correlation(rows[i], rows[j])) < 0.25

    def test_exhausts_gracefully(self, caplog):
        X = np.tile([True, False], (3, 20))
        res = select_bits(packed_matrix(X), np.arange(0, 40, 2), np.arange(1, 40, 2), np.ones(20), n=3)
        assert res.exhausted and len(res.selected) <= 1
        assert "stopped with" in caplog.text

    def test_report_csv(self):
        X, pa, pb, y, _ = planted_problem(n_cands=30, n_pairs=40, seed=4)
        res = select_bits(packed_matrix(X), pa, pb, y, n=3)
        lines = res.report_csv().splitlines()
        assert lines[0] == "round,candidate,eps,admitted,max_rho,fold"
        assert len(lines) == len(res.records) + 1

    def test_deterministic(self):
        X, pa, pb, y, _ = planted_problem(seed=6)
        a = select_bits(packed_matrix(X), pa, pb, y, n=8, seed=11)
        b = select_bits(packed_matrix(X), pa, pb, y, n=8, seed=11)
        assert a.report_csv() == b.report_csv()

    def test_literal_options_run(self):
        X, pa, pb, y, _ = planted_problem(seed=8)
        for kw in ({"literal_eq2": True}, {"literal_phi_sign": True}, {"cycle_folds": False},
                   {"reweight_rejected": True}):
            res = select_bits(packed_matrix(X), pa, pb, y, n=3, **kw)
            assert len(res.records) >= len(res.selected)


class TestMapSelection:
    def test_from_means(self, rng):
        geom = get_geometry(16, 4)
        means = region_means(rng.uniform(size=(80, 16, 16)), geom)
        pa, pb = np.arange(0, 80, 2), np.arange(1, 80, 2)
        y = (np.arange(40) % 4 == 0).astype(int)
        sel = select_map_bits(means, geom, "Int", pa, pb, y, n=4)
        assert sel.n_candidates == geom.n_pairs
        assert sel.n_survivors == geom.n_pairs // 4
        assert len(sel.candidate_ids) == len(sel.result.selected)

    def test_memory_cap(self, rng):
        geom = get_geometry(16, 4)
        means = region_means(rng.uniform(size=(80, 16, 16)), geom)
        with pytest.raises(ResourceCapError):
            select_map_bits(means, geom, "Int", [0], [1], [1], n=4, memory_cap=10)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), folds=st.integers(1, 3))
def test_selection_property(seed, folds):
    X, pa, pb, y, _ = planted_problem(n_cands=25, n_pairs=40, n_planted=3, seed=seed)
    res = select_bits(packed_matrix(X), pa, pb, y, n=4, t_c=0.3, folds=folds, seed=seed)
    ref, _ = naive_select(X, pa, pb, y, 4, 0.3, folds, seed)
    assert res.selected == ref
    assert len(set(res.selected)) == len(res.selected)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l2r.geometry import isd, pss
from l2r.lexical import InvertedIndex
from l2r.selection import (SelectionConfig, bm25_candidates, candidate_pool, select_new_negatives,
                           selection_scores, subsample)


def brute_force(ids, P, q, d_pos, alpha, n1):
    scored = []
    for i, d in enumerate(ids):
        s = alpha * pss(P[i], d_pos, q) + (1 - alpha) * isd(P[i], P, q)
        scored.append((-s, d))
    return [d for _, d in sorted(scored)[:n1]]


def pool(rng, n, dim=6):
    return [f"p{i:03d}" for i in range(n)], rng.normal(size=(n, dim))


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(alpha=-0.1), dict(alpha=1.5), dict(n1=0), dict(bm25_pool_size=3, n1=3)])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            SelectionConfig(**kw)

    def test_pool_size(self):
        assert SelectionConfig(n1=4, upsample_factor=3).pool_size == 12


class TestSelectNew:
    @settings(max_examples=80, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 100), st.integers(1, 8),
           st.sampled_from([0.0, 0.3, 0.6, 1.0]))
    def test_matches_brute_force(self, seed, n, n1, alpha):
        rng = np.random.default_rng(seed)
        ids, P = pool(rng, n)
        q, d_pos = rng.normal(size=6), rng.normal(size=6)
        got = select_new_negatives(ids, P, q, d_pos, SelectionConfig(alpha=alpha, n1=n1, bm25_pool_size=10 * n1))
        assert set(got) == set(brute_force(ids, P, q, d_pos, alpha, n1))

    def test_alpha_one_is_lowest_projection(self, rng):
        ids, P = pool(rng, 20)
        q, d_pos = rng.normal(size=6), rng.normal(size=6)
        got = select_new_negatives(ids, P, q, d_pos, SelectionConfig(alpha=1.0, n1=4))
        proj = P @ q
        sgn = 1.0 if d_pos @ q >= 0 else -1.0
        expect = [ids[i] for i in np.argsort(sgn * proj, kind="stable")[:4]]
        assert got == expect

    def test_alpha_zero_ignores_positive(self, rng):
        ids, P = pool(rng, 15)
        q = rng.normal(size=6)
        cfg = SelectionConfig(alpha=0.0, n1=3)
        a = select_new_negatives(ids, P, q, rng.normal(size=6), cfg)
        b = select_new_negatives(ids, P, q, -10 * rng.normal(size=6), cfg)
        assert a == b

    def test_scale_invariant_in_query(self, rng):
        ids, P = pool(rng, 25)
        q, d_pos = rng.normal(size=6), rng.normal(size=6)
        cfg = SelectionConfig(n1=5)
        assert select_new_negatives(ids, P, q, d_pos, cfg) == select_new_negatives(ids, P, 7.5 * q, d_pos, cfg)

    def test_short_and_empty_pool(self, rng):
        ids, P = pool(rng, 2)
        cfg = SelectionConfig(n1=3)
        assert sorted(select_new_negatives(ids, P, rng.normal(size=6), rng.normal(size=6), cfg)) == ids
        assert select_new_negatives([], np.zeros((0, 6)), rng.normal(size=6), rng.normal(size=6), cfg) == []

    def test_ties_prefer_smaller_id(self):
        P = np.array([[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]])
        got = select_new_negatives(["c", "a", "b"], P, np.array([1.0, 0.0]), np.array([1.0, 0.0]), SelectionConfig(n1=2))
        assert got == ["a", "b"]

    def test_hand_scores(self):
        q = np.array([1.0, 0.0])
        P = np.array([[0.5, 0.0], [0.0, 2.0]])
        s = selection_scores(P, q, np.array([1.0, 0.0]), 0.5)
        # PSS: 0.5 and 1.0; ISD: each row is 2.0 from the other, 0 from itself
        np.testing.assert_allclose(s, [0.5 * 0.5 + 0.5 * 1.0, 0.5 * 1.0 + 0.5 * 1.0])


class TestPool:
    @pytest.fixture
    def index(self):
        idx = InvertedIndex()
        idx.add_documents([(f"d{i:02d}", ["apple"] * (1 + i % 3) + ["x"] * i) for i in range(30)])
        return idx

    def test_excludes_positives_and_other_sessions(self, index):
        session = {f"d{i:02d}" for i in range(10, 30)}
        got = bm25_candidates(["apple"], session, index, 8, exclude={"d11", "d12"})
        assert len(got) == 8
        assert set(got) <= session - {"d11", "d12"}

    def test_subsample_preserves_order_and_size(self, rng):
        ids = [f"x{i}" for i in range(50)]
        sub = subsample(ids, 10, 3)
        assert len(sub) == 10 and sub == sorted(sub, key=ids.index)
        assert subsample(ids, 10, 3) == sub
        assert subsample(ids[:4], 10, 3) == ids[:4]

    def test_candidate_pool_size(self, index):
        cfg = SelectionConfig(n1=3, upsample_factor=2, bm25_pool_size=15)
        got = candidate_pool(["apple"], {f"d{i:02d}" for i in range(30)}, index, cfg, 0)
        assert len(got) == 6 and len(set(got)) == 6

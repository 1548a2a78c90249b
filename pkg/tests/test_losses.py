import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factories import random_instance
from l2r import losses as L
from l2r.encoder import DualEncoder, FeatureVector

ALL = {
    "contrastive": L.contrastive_loss,
    "rank_compat": L.rank_loss_compat,
    "embed_align": L.embed_align_loss,
    "rank_align": L.rank_align_loss,
}


def e(i):
    return FeatureVector([i], [1.0])


def scalar_instance(live_scores, frozen_pos=None, frozen_mem=(), n_new=0):
    """dim=1 encoder where every score equals the document's weight."""
    m = len(live_scores)
    enc = DualEncoder(m + 1, 1)
    enc.W_q[:] = 0.0
    enc.W_q[0, 0] = 1.0
    enc.W_d[1:, 0] = live_scores
    docs = [e(i + 1) for i in range(m)]
    inst = L.TrainingInstance(
        e(0), docs[0], docs[1:1 + n_new], docs[1 + n_new:],
        None if frozen_pos is None else [frozen_pos], [[v] for v in frozen_mem], "compat",
    )
    return enc, inst


def naive_ce(scores):
    p = np.exp(scores) / np.exp(scores).sum()
    return -np.log(p[0])


class TestContrastive:
    def test_equal_scores_give_log_m(self):
        enc, inst = scalar_instance([0.3] * 6, n_new=3)
        loss, _ = L.contrastive_loss(inst, enc)
        assert loss == pytest.approx(math.log(6), abs=1e-12)

    def test_decreases_as_positive_grows(self):
        values = []
        for s in [0.0, 1.0, 3.0, 10.0, 40.0]:
            enc, inst = scalar_instance([s, 0.5, -0.2, 0.1], n_new=3)
            values.append(L.contrastive_loss(inst, enc)[0])
        assert all(a > b for a, b in zip(values, values[1:]))
        assert values[-1] < 1e-15

    def test_matches_naive_softmax(self, rng):
        scores = rng.normal(size=6)
        enc, inst = scalar_instance(scores, n_new=3)
        assert L.contrastive_loss(inst, enc)[0] == pytest.approx(naive_ce(scores), abs=1e-12)

    def test_stable_for_large_scores(self):
        enc, inst = scalar_instance([1000.0, 999.0, 0.0], n_new=2)
        loss, _ = L.contrastive_loss(inst, enc)
        assert loss == pytest.approx(math.log1p(math.exp(-1)), abs=1e-12)

    def test_non_finite_scores(self):
        enc, inst = scalar_instance([np.inf, 0.0], n_new=1)
        with pytest.raises(FloatingPointError):
            L.contrastive_loss(inst, enc)

    def test_gradient(self, rng):
        enc, inst = random_instance(rng)
        assert L.finite_diff_check(L.contrastive_loss, inst, enc) < 1e-4


class TestRankCompat:
    def test_equal_scores(self):
        enc, inst = scalar_instance([5.0, 0.0, 0.0, 7.0], frozen_pos=0.0, frozen_mem=[0.0], n_new=2)
        # live positive/memory scores are ignored; new docs score 0
        assert L.rank_loss_compat(inst, enc)[0] == pytest.approx(math.log(4), abs=1e-12)

    def test_missing_frozen_embedding(self):
        enc, inst = scalar_instance([0.0, 0.0], n_new=1)
        with pytest.raises(ValueError, match="frozen"):
            L.rank_loss_compat(inst, enc)

    def test_document_gradient_only_on_new_rows(self, rng):
        enc, inst = random_instance(rng, F=200)
        _, g = L.rank_loss_compat(inst, enc)
        allowed = set(np.concatenate([x.indices for x in inst.new_negatives]).tolist())
        assert set(g.touched_rows("document").tolist()) <= allowed

    def test_gradient(self, rng):
        enc, inst = random_instance(rng)
        assert L.finite_diff_check(L.rank_loss_compat, inst, enc) < 1e-4


class TestEmbedAlign:
    def test_zero_when_frozen_matches(self, rng):
        enc, inst = random_instance(rng, frozen_noise=0.0)
        assert L.embed_align_loss(inst, enc)[0] == pytest.approx(0.0, abs=1e-24)

    def test_unit_offset(self):
        enc = DualEncoder(3, 2)
        enc.W_d[1] = [2.0, 3.0]
        inst = L.TrainingInstance(e(0), e(1), [], [], [1.0, 2.0], [], "compat")
        assert L.embed_align_loss(inst, enc)[0] == pytest.approx(1.0)

    def test_query_tower_untouched(self, rng):
        enc, inst = random_instance(rng)
        _, g = L.embed_align_loss(inst, enc)
        assert not np.any(g.to_dense(enc)["query"])

    def test_gradient(self, rng):
        enc, inst = random_instance(rng)
        assert L.finite_diff_check(L.embed_align_loss, inst, enc) < 1e-4


class TestRankAlign:
    def test_hand_kl(self):
        # compat p = (.5, .25, .25); live p' = (.25, .25, .5); candidate order pos, new, mem
        enc, inst = scalar_instance(
            [math.log(0.25), math.log(0.25), math.log(0.5)],
            frozen_pos=math.log(0.5), frozen_mem=[math.log(0.25)], n_new=1,
        )
        want = 0.5 * math.log(2) + 0.25 * math.log(0.5)
        assert want == pytest.approx(0.1733, abs=5e-5)
        assert L.rank_align_loss(inst, enc)[0] == pytest.approx(want, abs=1e-12)

    def test_zero_when_frozen_matches(self, rng):
        enc, inst = random_instance(rng, frozen_noise=0.0)
        assert abs(L.rank_align_loss(inst, enc)[0]) < 1e-9

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 5.0))
    def test_non_negative(self, seed, noise):
        enc, inst = random_instance(np.random.default_rng(seed), frozen_noise=noise)
        assert L.rank_align_loss(inst, enc)[0] >= 0.0

    def test_gradient(self, rng):
        enc, inst = random_instance(rng)
        assert L.finite_diff_check(L.rank_align_loss, inst, enc) < 1e-4

    def test_stop_gradient_variant(self, rng):
        enc, inst = random_instance(rng)
        loss, g = L.rank_align_loss(inst, enc, stop_grad=True)
        full, _ = L.rank_align_loss(inst, enc)
        assert loss == full
        assert g.norm() > 0

    def test_matches_naive_kl(self, rng):
        enc, inst = random_instance(rng)
        q = enc.encode(inst.query, "query")
        docs = [inst.positive, *inst.new_negatives, *inst.memory_negatives]
        live = enc.encode_many(docs, "document") @ q
        compat = live.copy()
        compat[0] = inst.positive_frozen @ q
        compat[4:] = np.array(inst.memory_frozen) @ q
        p = np.exp(compat) / np.exp(compat).sum()
        r = np.exp(live) / np.exp(live).sum()
        assert L.rank_align_loss(inst, enc)[0] == pytest.approx(float(np.sum(p * np.log(p / r))), abs=1e-12)


class TestTotal:
    def test_lambda_zero(self, rng):
        enc, inst = random_instance(rng)
        got = L.total_compat_loss(inst, enc, L.LossConfig(0.0, "ranking"))[0]
        assert got == L.rank_loss_compat(inst, enc)[0]

    def test_zero_kl_reduces_to_rank(self, rng):
        enc, inst = random_instance(rng, frozen_noise=0.0)
        got = L.total_compat_loss(inst, enc, L.LossConfig(1.0, "ranking"))[0]
        assert got == pytest.approx(L.rank_loss_compat(inst, enc)[0], abs=1e-9)

    def test_component_sum(self):
        enc, inst = scalar_instance(
            [math.log(0.25), math.log(0.25), math.log(0.5)],
            frozen_pos=math.log(0.5), frozen_mem=[math.log(0.25)], n_new=1,
        )
        rank = -math.log(0.5)
        kl = 0.25 * math.log(2)
        assert L.total_compat_loss(inst, enc, L.LossConfig(1.0, "ranking"))[0] == pytest.approx(rank + kl, abs=1e-12)

    @pytest.mark.parametrize("kind", ["embedding", "ranking"])
    def test_affine_in_lambda(self, rng, kind):
        enc, inst = random_instance(rng)
        l0 = L.total_compat_loss(inst, enc, L.LossConfig(0.0, kind))[0]
        l1 = L.total_compat_loss(inst, enc, L.LossConfig(1.0, kind))[0]
        l3 = L.total_compat_loss(inst, enc, L.LossConfig(3.0, kind))[0]
        assert l3 - l0 == pytest.approx(3 * (l1 - l0), rel=1e-12)

    @pytest.mark.parametrize("kind", ["none", "embedding", "ranking"])
    def test_gradient(self, rng, kind):
        enc, inst = random_instance(rng)
        cfg = L.LossConfig(1.0, kind)
        assert L.finite_diff_check(lambda i, p: L.total_compat_loss(i, p, cfg), inst, enc) < 1e-4

    def test_bad_config(self):
        with pytest.raises(ValueError):
            L.LossConfig(float("nan"))
        with pytest.raises(ValueError):
            L.LossConfig(1.0, "cosine")


class TestBatchAndChecker:
    def test_batch_mean(self, rng):
        pairs = [random_instance(rng) for _ in range(3)]
        enc = pairs[0][0]
        insts = [i for _, i in pairs]
        total, _ = L.batch_loss(L.contrastive_loss, insts, enc)
        assert total == pytest.approx(np.mean([L.contrastive_loss(i, enc)[0] for i in insts]), abs=1e-12)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            L.batch_loss(L.contrastive_loss, [], DualEncoder(4, 2))

    def test_quadratic_is_exact(self, rng):
        class Params:
            def __init__(self):
                self.W = rng.normal(size=(5, 3))

            def arrays(self):
                return {"w": self.W}

        A = rng.normal(size=(5, 5))
        A = A @ A.T

        def quad(_, p):
            return 0.5 * float(np.sum(p.W * (A @ p.W))), {"w": A @ p.W}

        assert L.finite_diff_check(quad, None, Params(), epsilon=1e-4) < 1e-8

    def test_epsilon_range(self, rng):
        enc, inst = random_instance(rng)
        with pytest.raises(ValueError):
            L.finite_diff_check(L.contrastive_loss, inst, enc, epsilon=0.1)

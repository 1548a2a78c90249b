import numpy as np
import pytest

from l2r.benchmark import GeneratorConfig, SessionStream, generate_synthetic_stream
from l2r.encoder import DualEncoder
from l2r.geometry import CALLS
from l2r.runner import RunConfig, FeatureCache, loss_curve, run_session, run_stream, train_initial_session, write_run

TINY = dict(docs_per_domain=400, topics_per_domain=6, subtopics_per_topic=8, train_queries=60,
            dev_queries=5, test_queries=20)


def tiny_cfg(**kw):
    return RunConfig(**{"F": 4096, "dim": 32, "metrics": ("S@5", "R@100"), **kw})


@pytest.fixture(scope="module")
def stream():
    return generate_synthetic_stream(GeneratorConfig(**TINY), seed=0)


@pytest.fixture(scope="module")
def feats(stream):
    return FeatureCache(stream, 4096)


@pytest.fixture(scope="module")
def initial(stream, feats):
    return train_initial_session(stream, tiny_cfg(), feats)


def fresh(state):
    import copy
    return copy.deepcopy(state)


class TestConfig:
    def test_unknown_method(self):
        with pytest.raises(ValueError):
            RunConfig(method="magic")

    def test_primary_metric_listed(self):
        with pytest.raises(ValueError):
            RunConfig(metrics=("R@100",), primary_metric="S@5")

    def test_default_negatives(self):
        cfg = RunConfig()
        assert cfg.n1 + cfg.n2 == 5 and cfg.alpha == 0.6

    def test_dict_round_trip(self):
        cfg = tiny_cfg(method="er", compat=True)
        assert RunConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ValueError):
            RunConfig.from_dict({"nonsense": 1})

    @pytest.mark.parametrize("method,mode", [("l2r_rank", "compat"), ("l2r_nocompat", "rebuild"), ("initial", "compat"),
                                             ("retrain", "rebuild"), ("er", "rebuild"), ("incre_train", "rebuild")])
    def test_store_mode(self, method, mode):
        assert RunConfig(method=method).store_mode == mode


class TestInitial:
    def test_zero_epochs_keeps_init(self, stream, feats):
        cfg = tiny_cfg(epochs_initial=0)
        state = train_initial_session(stream, cfg, feats)
        ref = DualEncoder(cfg.F, cfg.dim, seed=cfg.seed)
        np.testing.assert_array_equal(state.encoder.W_q, ref.W_q)
        assert len(state.store) == len(stream[0].docs)

    def test_loss_curve_decreases(self, initial):
        curve = loss_curve(initial.log[0]["losses"], 50)
        steps = np.diff(curve)
        assert len(steps) >= 3
        assert np.mean(steps < 0) >= 0.8

    def test_memory_slot_counts(self, stream, feats):
        # an unbounded buffer keeps every distinct negative a query saw
        seen = train_initial_session(stream, tiny_cfg(n=10_000), feats).memory
        for n in (4, 12):
            mem = train_initial_session(stream, tiny_cfg(n=n), feats).memory
            assert mem.queries() == seen.queries()
            for q in seen.queries():
                assert len(mem.entries(q)) == min(n, len(seen.entries(q)))

    def test_store_holds_session_zero(self, initial, stream):
        assert set(initial.store.embeddings) == set(stream[0].docs)
        assert initial.store.embed_op_counter == len(stream[0].docs)


class TestSessions:
    def test_initial_method_freezes_encoder(self, initial, stream, feats):
        state = fresh(initial)
        before = state.encoder.W_q.copy(), state.encoder.W_d.copy()
        run_session(state, stream, 1, tiny_cfg(method="initial"), feats)
        np.testing.assert_array_equal(state.encoder.W_q, before[0])
        np.testing.assert_array_equal(state.encoder.W_d, before[1])
        assert set(stream[1].docs) <= set(state.store.embeddings)

    def test_l2r_rank_keeps_old_records(self, initial, stream, feats):
        state = fresh(initial)
        before = state.store.digests(0)
        run_session(state, stream, 1, tiny_cfg(), feats)
        assert state.store.digests(0) == before
        assert not np.array_equal(state.encoder.W_d, initial.encoder.W_d)

    def test_retrain_counter(self, initial, stream, feats):
        state = fresh(initial)
        c0 = state.store.embed_op_counter
        run_session(state, stream, 1, tiny_cfg(method="retrain"), feats)
        assert state.store.embed_op_counter - c0 == len(stream.docs_until(1))

    def test_er_never_scores(self, initial, stream, feats):
        state = fresh(initial)
        CALLS.clear()
        run_session(state, stream, 1, tiny_cfg(method="er", compat=True), feats)
        assert CALLS["pss"] == 0 and CALLS["isd"] == 0

    def test_er_whole_buffer_when_n2_large(self, initial):
        qid = initial.memory.queries()[0]
        got = initial.memory.random_memory_negatives(qid, initial.memory.capacity, 0)
        assert [e.doc_id for e in got] == initial.memory.doc_ids(qid)

    def test_incre_train_leaves_memory(self, initial, stream, feats):
        state = fresh(initial)
        snapshot = {q: state.memory.doc_ids(q) for q in state.memory.queries()}
        run_session(state, stream, 1, tiny_cfg(method="incre_train"), feats)
        assert {q: state.memory.doc_ids(q) for q in state.memory.queries()} == snapshot


@pytest.fixture(scope="module")
def result(stream, feats, initial):
    return run_stream(stream, tiny_cfg(), initial_state=initial, feats=feats)


class TestStream:
    def test_seeded(self, result, stream, feats, initial):
        again = run_stream(stream, tiny_cfg(), initial_state=initial, feats=feats)
        for m in result["matrices"]:
            assert result["matrices"][m].to_csv() == again["matrices"][m].to_csv()

    def test_grid_complete(self, result, stream):
        assert result["matrices"]["S@5"].mask.all()
        assert set(result["summaries"]["S@5"]) == {"P_t", "AP", "Forget_t", "FWT"}

    def test_compat_counter(self, result, stream):
        assert result["cost_report"]["embed_ops"] == sum(stream.session_sizes())

    def test_rebuild_counter(self, stream, feats, initial):
        r = run_stream(stream, tiny_cfg(method="l2r_nocompat"), initial_state=initial, feats=feats)
        sizes = stream.session_sizes()
        assert r["cost_report"]["embed_ops"] == sum(sum(sizes[: t + 1]) for t in range(len(sizes)))

    def test_memory_guarantee(self, result):
        assert result["memory_updates"] > 0
        assert result["memory_guarantee_violations"] == 0

    def test_initial_state_not_mutated(self, result, initial):
        assert initial.session == 0

    def test_single_session(self, stream, feats):
        one = SessionStream(stream.sessions[:1], stream.config)
        r = run_stream(one, tiny_cfg(), feats=feats)
        assert r["matrices"]["S@5"].values.shape == (1, 1)
        assert r["summaries"]["S@5"]["AP"] is None

    def test_report_schema_stable(self, result, stream, feats, initial, tmp_path):
        other = run_stream(stream, tiny_cfg(method="initial"), initial_state=initial, feats=feats)
        import json
        a = json.loads((write_run(result, tmp_path / "a") / "summary.json").read_text())
        b = json.loads((write_run(other, tmp_path / "b", save_artifacts=False) / "summary.json").read_text())
        assert set(a) == set(b)
        assert (tmp_path / "a" / "perf_matrix.csv").read_text().splitlines()[0] == "metric,i,j,value"
        assert list((tmp_path / "a").glob("encoder_s*.bin")) and list((tmp_path / "a").glob("memory_s*.bin"))


def test_loss_curve_windows():
    assert loss_curve([], 5) == []
    assert loss_curve([1, 2, 3], 5) == [2.0]
    assert loss_curve(list(range(10)), 5) == [2.0, 7.0]


def test_dev_scores_logged(result):
    for e in result["session_log"]:
        assert set(e["dev"]) == {"S@5", "R@100"}

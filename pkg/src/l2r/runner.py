"""Session-by-session lifelong training, baselines, evaluation and reports.

``run_stream`` trains the initial model on the labeled pairs of session 0 and
then, for every upcoming session, selects negatives, updates the encoder,
refreshes the replay memory and extends the document index, evaluating the
performance grid after each session.
"""

import copy
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses as L
from .encoder import DualEncoder, Gradients, feature_matrix, featurize
from .index_store import EmbeddingStore, topk_indices
from .lexical import InvertedIndex
from .memory import MemoryBuffer, MemoryEntry, TempMemory, update_memory
from .metrics import PerfMatrix, lifelong_summary, parse_metric, rank_metric
from .selection import SelectionConfig, bm25_candidates, random_negatives, select_new_negatives, subsample

log = logging.getLogger(__name__)

METHODS = ("l2r_vanilla", "l2r_emb", "l2r_rank", "l2r_nocompat", "initial", "incre_train", "retrain", "er")
ALIGN_OF = {"l2r_vanilla": "none", "l2r_emb": "embedding", "l2r_rank": "ranking"}


@dataclass
class RunConfig:
    method: str = "l2r_rank"
    dim: int = 64
    F: int = 1 << 15
    shared_towers: bool = False
    alpha: float = 0.6
    lam: float = 1.0
    n: int = 30
    n1: int = 3
    n2: int = 2
    lr_initial: float = 3.0
    lr_upcoming: float = 3.0
    clip_norm: float = 1.0
    cross_negatives: int = 2
    epochs_initial: int = 1
    epochs_upcoming: int = 1
    batch_size: int = 1
    log_every: int = 50
    k1: float = 0.8
    b: float = 0.72
    pool_initial: int = 500
    pool_upcoming: int = 200
    upsample_factor: int = 2
    seed: int = 0
    # er / incre_train only: train with embedding alignment and keep the
    # index backward compatible
    compat: bool = False
    stop_grad_compat_dist: bool = False
    mem_select: str = "isd"
    mem_update: str = "isd"
    metrics: tuple = ("S@5", "R@100", "MRR@10")
    primary_metric: str = "S@5"
    eval_forward: bool = True
    eval_split: str = "test"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        self.metrics = tuple(self.metrics)
        for m in self.metrics:
            parse_metric(m)
        if self.primary_metric not in self.metrics:
            raise ValueError("primary_metric must be one of metrics")
        if self.mem_select not in ("isd", "random") or self.mem_update not in ("isd", "random"):
            raise ValueError("mem_select / mem_update must be 'isd' or 'random'")
        if self.log_every < 1:
            raise ValueError("log_every must be positive")
        if self.n1 < 1 or self.n2 < 0 or self.n < 1:
            raise ValueError("n1 >= 1, n2 >= 0 and n >= 1 required")

    @property
    def is_compat(self):
        if self.method in ALIGN_OF or self.method == "initial":
            return True
        if self.method in ("l2r_nocompat", "retrain"):
            return False
        return self.compat

    @property
    def store_mode(self):
        return "compat" if self.is_compat else "rebuild"

    @property
    def uses_memory(self):
        return self.method in ("l2r_vanilla", "l2r_emb", "l2r_rank", "l2r_nocompat", "er")

    @property
    def align_kind(self):
        if self.method in ALIGN_OF:
            return ALIGN_OF[self.method]
        return "embedding" if self.is_compat else "none"

    def loss_config(self):
        return L.LossConfig(self.lam, self.align_kind, self.stop_grad_compat_dist)

    def selection_config(self, session):
        pool = self.pool_initial if session == 0 else self.pool_upcoming
        return SelectionConfig(self.alpha, self.n1, pool, self.upsample_factor)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["metrics"] = list(self.metrics)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown RunConfig fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class RunState:
    encoder: DualEncoder
    memory: MemoryBuffer
    store: EmbeddingStore
    index: InvertedIndex
    session: int = 0
    log: list = field(default_factory=list)
    memory_records: list = field(default_factory=list)


class FeatureCache:
    """Feature vectors for every document and query in the stream, built once."""

    def __init__(self, stream, F):
        self.F = F
        self.docs = {}
        for s in stream.sessions:
            for d, toks in s.docs.items():
                self.docs[d] = featurize(toks, F)
        self.queries = {}

    def query(self, qid, tokens):
        x = self.queries.get(qid)
        if x is None:
            x = self.queries[qid] = featurize(tokens, self.F)
        return x


def _rng(seed, session, purpose):
    codes = {"init": 0, "order": 1, "pool": 2, "negatives": 3, "memory": 4, "anchors": 5, "retrain": 6}
    return np.random.default_rng([seed, session, codes[purpose]])


def _positives_by_query(stream):
    out = {}
    for qid, _, d in stream.train_pairs():
        out.setdefault(qid, set()).add(d)
    return out


class _Trainer:
    """Shared mini-batch SGD loop."""

    def __init__(self, encoder, lr, batch_size, clip_norm=None):
        self.encoder = encoder
        self.clip_norm = clip_norm
        self.lr = lr
        self.batch_size = max(1, batch_size)
        self.batch = []
        self.losses = []

    def push(self, inst, loss_fn):
        self.batch.append((inst, loss_fn))
        if len(self.batch) >= self.batch_size:
            self.flush()

    def flush(self):
        if not self.batch:
            return
        total = 0.0
        scale = 1.0 / len(self.batch)
        grads = Gradients(self.encoder.dim)
        for inst, fn in self.batch:
            try:
                loss, g = fn(inst, self.encoder)
            except FloatingPointError as exc:
                log.warning("skipping instance: %s", exc)
                continue
            total += loss * scale
            grads.extend(g, scale)
        self.encoder.apply(grads, self.lr, self.clip_norm)
        self.losses.append(total)
        self.batch = []


def _train_supervised(encoder, stream, feats, index, doc_ids, cfg, session, purpose, epochs):
    """Contrastive training on C_0.  Each instance takes ``cross_negatives``
    uniform draws from the positives of other training queries (a sampled
    stand-in for in-batch negatives) and the rest at random from the BM25
    top hits over ``doc_ids``.  Returns (negatives used per query, losses,
    skipped)."""
    pairs = stream.train_pairs()
    positives = _positives_by_query(stream)
    sel = cfg.selection_config(session)
    hits = {}
    for qid, qtok, _ in pairs:
        if qid not in hits:
            hits[qid] = bm25_candidates(qtok, doc_ids, index, sel.bm25_pool_size, positives[qid])
    order_rng = _rng(cfg.seed, session, "order")
    neg_rng = _rng(cfg.seed, session, purpose)
    trainer = _Trainer(encoder, cfg.lr_initial, cfg.batch_size, cfg.clip_norm)
    used = {}
    skipped = set()
    easy = min(cfg.cross_negatives, cfg.n1 + cfg.n2)
    k = cfg.n1 + cfg.n2 - easy
    corpus = sorted({d for qid, _, pos in pairs for d in positives[qid] if d in doc_ids})
    for _ in range(epochs):
        for i in order_rng.permutation(len(pairs)):
            qid, qtok, pos = pairs[i]
            if not hits[qid]:
                skipped.add(qid)
                continue
            negs = random_negatives(hits[qid], k, neg_rng)
            while easy and len(negs) < k + easy and len(corpus) > len(positives[qid]) + len(negs):
                d = corpus[int(neg_rng.integers(len(corpus)))]
                if d not in positives[qid] and d not in negs:
                    negs.append(d)
            used.setdefault(qid, []).extend(negs)
            inst = L.TrainingInstance(
                feats.query(qid, qtok), feats.docs[pos], [feats.docs[d] for d in negs], []
            )
            trainer.push(inst, L.contrastive_loss)
        trainer.flush()
    return used, trainer.losses, sorted(skipped)


def train_initial_session(stream, cfg, feats=None):
    """Train f_0, reservoir-fill M_0 with the negatives it saw and index D_0."""
    feats = feats or FeatureCache(stream, cfg.F)
    encoder = DualEncoder(cfg.F, cfg.dim, seed=cfg.seed, shared=cfg.shared_towers)
    index = InvertedIndex(cfg.k1, cfg.b)
    s0 = stream[0]
    index.add_documents((d, s0.docs[d]) for d in sorted(s0.docs))
    used, losses, skipped = _train_supervised(
        encoder, stream, feats, index, set(s0.docs), cfg, 0, "negatives", cfg.epochs_initial
    )
    store = EmbeddingStore(cfg.dim)
    store.upsert_session(0, {d: feats.docs[d] for d in s0.docs}, encoder, "compat")
    memory = MemoryBuffer(cfg.n)
    mem_rng = _rng(cfg.seed, 0, "memory")
    for qid in sorted(used):
        stream_entries = [MemoryEntry(d, feats.docs[d], store.get(d), 0) for d in used[qid]]
        memory.reservoir_fill(qid, stream_entries, mem_rng)
    state = RunState(encoder, memory, store, index, 0)
    state.log.append({"session": 0, "losses": losses, "skipped_queries": len(skipped)})
    return state


def _select_memory(state, cfg, qid, new_embs, q_emb, rng):
    mem = state.memory
    entries = mem.entries(qid)
    if cfg.n2 == 0 or not entries:
        return []
    if cfg.method == "er" or cfg.mem_select == "random":
        return mem.random_memory_negatives(qid, cfg.n2, rng)
    override = None
    if not cfg.is_compat:
        override = state.encoder.encode_many([e.features for e in entries], "document")
    return mem.select_memory_negatives(qid, new_embs, q_emb, cfg.n2, embeddings=override)


def run_session(state, stream, t, cfg, feats):
    """Learn from the unlabeled documents of session ``t`` (t >= 1)."""
    session = stream[t]
    new_docs = {d: feats.docs[d] for d in session.docs}
    state.index.add_documents((d, session.docs[d]) for d in sorted(session.docs))
    entry = {"session": t, "losses": [], "skipped_queries": 0, "short_selections": 0, "failures": 0}
    enc = state.encoder

    if cfg.method == "initial":
        state.store.upsert_session(t, new_docs, enc, "compat")
    elif cfg.method == "retrain":
        enc = state.encoder = DualEncoder(cfg.F, cfg.dim, seed=cfg.seed, shared=cfg.shared_towers)
        _, losses, skipped = _train_supervised(
            enc, stream, feats, state.index, set(stream.docs_until(t)), cfg, t, "retrain", cfg.epochs_initial
        )
        entry.update(losses=losses, skipped_queries=len(skipped))
        enc.version_tag = t
        state.store.upsert_session(t, new_docs, enc, "rebuild")
    else:
        _incremental_session(state, stream, t, cfg, feats, new_docs, entry)
    state.session = t
    state.log.append(entry)
    return state


def _incremental_session(state, stream, t, cfg, feats, new_docs, entry):
    enc = state.encoder
    sel = cfg.selection_config(t)
    lcfg = cfg.loss_config()
    compat = cfg.is_compat
    if compat:
        loss_fn = lambda inst, p: L.total_compat_loss(inst, p, lcfg)  # noqa: E731
    else:
        loss_fn = L.contrastive_loss
    pairs = stream.train_pairs()
    positives = _positives_by_query(stream)
    session_ids = set(new_docs)
    hits = {}
    order_rng = _rng(cfg.seed, t, "order")
    pool_rng = _rng(cfg.seed, t, "pool")
    neg_rng = _rng(cfg.seed, t, "negatives")
    temp = TempMemory()
    trainer = _Trainer(enc, cfg.lr_upcoming, cfg.batch_size, cfg.clip_norm)
    l2r_select = cfg.method.startswith("l2r")

    for _ in range(cfg.epochs_upcoming):
        for i in order_rng.permutation(len(pairs)):
            qid, qtok, pos = pairs[i]
            if qid not in hits:
                hits[qid] = bm25_candidates(qtok, session_ids, state.index, sel.bm25_pool_size, positives[qid])
            if not hits[qid]:
                entry["skipped_queries"] += 1
                continue
            try:
                xq = feats.query(qid, qtok)
                if cfg.method == "incre_train":
                    pool = subsample(hits[qid], sel.pool_size, pool_rng)
                    new = random_negatives(pool, cfg.n1 + cfg.n2, neg_rng)
                    mem = []
                else:
                    pool = subsample(hits[qid], sel.pool_size, pool_rng)
                    pool_embs = enc.encode_many([feats.docs[d] for d in pool], "document")
                    q_emb = enc.encode(xq, "query")
                    if l2r_select:
                        d_pos = enc.encode(feats.docs[pos], "document")
                        new = select_new_negatives(pool, pool_embs, q_emb, d_pos, sel)
                    else:
                        new = random_negatives(pool, cfg.n1, neg_rng)
                    if len(new) < cfg.n1:
                        entry["short_selections"] += 1
                    temp.add(qid, [MemoryEntry(d, feats.docs[d], None, t) for d in new])
                    new_embs = pool_embs[[pool.index(d) for d in new]]
                    mem = _select_memory(state, cfg, qid, new_embs, q_emb, neg_rng) if q_emb.any() else []
                inst = L.TrainingInstance(
                    xq,
                    feats.docs[pos],
                    [feats.docs[d] for d in new],
                    [e.features for e in mem],
                    mode="compat" if compat else "no_compat",
                )
                if compat:
                    inst.positive_frozen = state.store.get(pos)
                    inst.memory_frozen = [e.embedding for e in mem]
                trainer.push(inst, loss_fn)
            except (FloatingPointError, ValueError) as exc:
                log.warning("session %d query %s failed: %s", t, qid, exc)
                entry["failures"] += 1
        trainer.flush()
    entry["losses"] = trainer.losses

    enc.version_tag = t
    state.store.upsert_session(t, new_docs, enc, cfg.store_mode)
    if not cfg.uses_memory:
        return
    store = state.store
    if not compat:
        state.memory.refresh(lambda entries: [store.get(e.doc_id) for e in entries])
    cand_embs = {d: store.get(d) for q in temp.queries() for d in (c.doc_id for c in temp.candidates(q))}
    anchor_rng = _rng(cfg.seed, t, "anchors")
    if cfg.method == "er" or cfg.mem_update == "random":
        for qid in temp.queries():
            cands = [MemoryEntry(c.doc_id, c.features, cand_embs[c.doc_id], t) for c in temp.candidates(qid)]
            if cfg.method == "er":
                state.memory.reservoir_fill(qid, cands, anchor_rng)
            else:
                state.memory.random_update_query(qid, cands, anchor_rng)
        temp.clear()
        return
    q_embs = {}
    for qid, qtok, _ in pairs:
        if qid in temp.pending:
            q_embs[qid] = enc.encode(feats.query(qid, qtok), "query")
    records = update_memory(state.memory, temp, q_embs, anchor_rng, candidate_embeddings=cand_embs)
    state.memory_records.extend((t, r) for r in records)


# ---------------------------------------------------------------- evaluation


def evaluate(state, stream, feats, cfg, i, matrices, js, split=None):
    """Fill ``p[i][j]`` for each j in ``js`` and every metric."""
    split = split or cfg.eval_split
    enc = state.encoder
    parsed = {m: parse_metric(m) for m in cfg.metrics}
    depth = max(n for _, n in parsed.values())
    for j in js:
        session = stream[j]
        queries = session.split_queries(split)
        qrels = session.split_qrels(split)
        if j <= state.session:
            ids, M = state.store.matrix(max_session=j)
        else:
            # future documents embedded with the current model, not counted as index cost
            docs = stream.docs_until(j)
            ids = sorted(docs)
            M = enc.encode_many(feature_matrix([feats.docs[d] for d in ids], cfg.F), "document")
        present = set(ids)
        qids = [q for q in sorted(queries) if set(qrels.get(q, ())) & present]
        if not qids:
            continue
        Q = enc.encode_many([feats.query(q, queries[q]) for q in qids], "query")
        S = Q @ M.T
        totals = dict.fromkeys(cfg.metrics, 0.0)
        for row, q in enumerate(qids):
            top = topk_indices(S[row], depth)
            ranking = [ids[k] for k in top]
            rel = set(qrels[q]) & present
            for m, (kind, n) in parsed.items():
                totals[m] += rank_metric(kind, n, ranking, rel)
        for m in cfg.metrics:
            matrices[m][i, j] = totals[m] / len(qids)


def run_stream(stream, cfg, initial_state=None, callback=None, feats=None):
    """Run sessions 0..T; returns dict with matrices, summaries and costs.

    ``initial_state`` (from ``train_initial_session`` with the same seed and
    initial-session settings) is deep-copied, so it can be shared across
    methods.  ``callback(state, t)`` runs after each session.
    """
    t0 = time.perf_counter()
    feats = feats or FeatureCache(stream, cfg.F)
    T = stream.T
    if initial_state is None:
        state = train_initial_session(stream, cfg, feats)
    else:
        state = copy.deepcopy(initial_state)
    matrices = {m: PerfMatrix(T, m) for m in cfg.metrics}
    _after_session(state, stream, feats, cfg, 0, matrices, callback)
    for t in range(1, T + 1):
        run_session(state, stream, t, cfg, feats)
        _after_session(state, stream, feats, cfg, t, matrices, callback)
    summaries = {}
    for m, mat in matrices.items():
        try:
            summaries[m] = lifelong_summary(mat, T)
        except KeyError as exc:
            log.warning("summary for %s incomplete: %s", m, exc)
    violations = sum(0 if r.guarantee_holds() else 1 for _, r in state.memory_records)
    return {
        "config": cfg.to_dict(),
        "matrices": matrices,
        "summaries": summaries,
        "cost_report": state.store.cost_report(),
        "session_log": [{k: v for k, v in e.items() if k != "losses"}
                        | {"mean_loss": _mean(e["losses"]), "loss_curve": loss_curve(e["losses"], cfg.log_every)} for e in state.log],
        "memory_guarantee_violations": violations,
        "memory_updates": len(state.memory_records),
        "runtime_s": time.perf_counter() - t0,
        "state": state,
    }


def _mean(xs):
    return float(np.mean(xs)) if len(xs) else None


def loss_curve(losses, every):
    """Mean loss over consecutive windows of ``every`` steps; a trailing
    partial window is dropped unless it is the only one."""
    xs = np.asarray(losses, dtype=np.float64)
    if xs.size == 0:
        return []
    n = max(1, xs.size // every)
    width = xs.size // n if xs.size >= every else xs.size
    return [float(xs[i * width:(i + 1) * width].mean()) for i in range(n)]


def _after_session(state, stream, feats, cfg, t, matrices, callback):
    evaluate(state, stream, feats, cfg, t, matrices, range(t + 1))
    if cfg.eval_forward:
        evaluate(state, stream, feats, cfg, t, matrices, range(t + 1, stream.T + 1))
    # dev score on the session just learned, logged only
    dev = {m: PerfMatrix(stream.T, m) for m in cfg.metrics}
    evaluate(state, stream, feats, cfg, t, dev, [t], split="dev")
    entry = next(e for e in reversed(state.log) if e["session"] == t)
    entry["dev"] = {m: (None if np.isnan(d.values[t, t]) else float(d.values[t, t])) for m, d in dev.items()}
    if callback is not None:
        callback(state, t)


def write_run(result, out_dir, save_artifacts=True):
    """runs/<name>/ layout: perf_matrix.csv, summary.json, cost_report.json,
    plus final memory snapshot and encoder checkpoint."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["metric,i,j,value"]
    for m, mat in result["matrices"].items():
        lines += mat.to_csv().splitlines()[1:]
    (out / "perf_matrix.csv").write_text("\n".join(lines) + "\n")
    summary = {
        "config": result["config"],
        "summaries": result["summaries"],
        "session_log": result["session_log"],
        "memory_guarantee_violations": result["memory_guarantee_violations"],
        "memory_updates": result["memory_updates"],
        "runtime_s": result["runtime_s"],
        "cost_report": result["cost_report"],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    (out / "cost_report.json").write_text(json.dumps(result["cost_report"], indent=2, sort_keys=True))
    if save_artifacts and "state" in result:
        state = result["state"]
        state.memory.save(out / f"memory_s{state.session}.bin")
        state.encoder.save(out / f"encoder_s{state.session}.bin")
    return out

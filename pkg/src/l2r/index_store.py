"""Document embedding index with model-version provenance and cost counting.

In ``compat`` mode a document is encoded once, by the model of the session it
arrived in, and its record is never rewritten.  In ``rebuild`` mode every
session re-encodes the whole collection with the newest model.
"""

import hashlib
import struct

import numpy as np

MODES = ("compat", "rebuild")
MAGIC = b"L2RSTORE"
FORMAT_VERSION = 1


class CostLedger:
    """Counts document encoder passes needed to keep the index current."""

    def __init__(self):
        self.sessions = []  # one dict per session

    @property
    def total(self):
        return sum(s["embed_ops"] for s in self.sessions)

    @property
    def collection_size(self):
        return sum(s["new_docs"] for s in self.sessions)

    def charge(self, session, new_docs, mode):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        cumulative = self.collection_size + new_docs
        ops = new_docs if mode == "compat" else cumulative
        self.sessions.append({"session": int(session), "new_docs": int(new_docs), "embed_ops": int(ops), "mode": mode})
        return ops

    def report(self):
        return {
            "embed_ops": self.total,
            "embed_ops_upcoming": sum(s["embed_ops"] for s in self.sessions if s["session"] > 0),
            "docs_stored": self.collection_size,
            "per_session": [dict(s) for s in self.sessions],
        }


def projected_costs(session_sizes, mode):
    """Run a list of session sizes (session 0 first) through a fresh ledger."""
    ledger = CostLedger()
    for t, n in enumerate(session_sizes):
        ledger.charge(t, n, mode)
    return ledger


class CompatViolation(RuntimeError):
    pass


class EmbeddingStore:
    """doc_id -> (float32 embedding, model_version, session_added)."""

    def __init__(self, dim):
        self.dim = int(dim)
        self.embeddings = {}
        self.model_version = {}
        self.session_added = {}
        self.features = {}
        self.ledger = CostLedger()
        self._cache = {}

    def __len__(self):
        return len(self.embeddings)

    def __contains__(self, doc_id):
        return doc_id in self.embeddings

    @property
    def embed_op_counter(self):
        return self.ledger.total

    def upsert_session(self, session, docs, encoder, mode):
        """Ingest ``docs`` (doc_id -> FeatureVector) arriving in ``session``.

        ``encoder`` needs ``encode_many(features, "document")`` and a
        ``version_tag``.  Empty sessions change nothing.
        """
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        docs = dict(docs)
        if not docs:
            return self
        if mode == "compat":
            clash = [d for d in docs if d in self.embeddings]
            if clash:
                raise CompatViolation(f"compat store cannot overwrite existing documents: {sorted(clash)[:5]}")
        for d, x in docs.items():
            self.features[d] = x
            self.session_added.setdefault(d, session)
        targets = list(docs) if mode == "compat" else list(self.features)
        E = encoder.encode_many([self.features[d] for d in targets], "document").astype("<f4")
        for d, e in zip(targets, E):
            self.embeddings[d] = e
            self.model_version[d] = encoder.version_tag
        self.ledger.charge(session, len(docs), mode)
        self._cache.clear()
        return self

    def matrix(self, max_session=None):
        """(sorted doc ids, float64 embedding matrix) restricted to docs added
        by ``max_session``."""
        key = max_session
        if key not in self._cache:
            ids = sorted(d for d in self.embeddings if max_session is None or self.session_added[d] <= max_session)
            M = np.vstack([self.embeddings[d] for d in ids]).astype(np.float64) if ids else np.zeros((0, self.dim))
            self._cache[key] = (ids, M)
        return self._cache[key]

    def get(self, doc_id):
        return self.embeddings[doc_id].astype(np.float64)

    def search_topk(self, q_emb, k, max_session=None):
        ids, M = self.matrix(max_session)
        return rank_topk(ids, M, q_emb, k)

    def record_digest(self, doc_id):
        h = hashlib.sha256()
        h.update(doc_id.encode("utf-8"))
        h.update(self.embeddings[doc_id].tobytes())
        h.update(struct.pack("<qq", self.model_version[doc_id], self.session_added[doc_id]))
        return h.hexdigest()

    def digests(self, session=None):
        return {d: self.record_digest(d) for d in self.embeddings if session is None or self.session_added[d] == session}

    def cost_report(self):
        return self.ledger.report()

    def save(self, path):
        """Little-endian file: magic, version, dim, count, then per record
        (doc_id, model_version, session_added, float32 embedding)."""
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<qqq", FORMAT_VERSION, self.dim, len(self.embeddings)))
            for d in sorted(self.embeddings):
                b = d.encode("utf-8")
                fh.write(struct.pack("<qqq", len(b), self.model_version[d], self.session_added[d]))
                fh.write(b)
                fh.write(self.embeddings[d].astype("<f4").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            if fh.read(len(MAGIC)) != MAGIC:
                raise ValueError(f"{path}: not an embedding store")
            version, dim, count = struct.unpack("<qqq", fh.read(24))
            if version != FORMAT_VERSION:
                raise ValueError(f"{path}: unsupported store version {version}")
            store = cls(dim)
            for _ in range(count):
                n, mv, sa = struct.unpack("<qqq", fh.read(24))
                d = fh.read(n).decode("utf-8")
                store.embeddings[d] = np.frombuffer(fh.read(4 * dim), dtype="<f4").copy()
                store.model_version[d] = mv
                store.session_added[d] = sa
        return store


def rank_topk(ids, M, q_emb, k):
    """Exact top-``k`` by dot product; ``ids`` must be sorted so that the
    stable sort breaks score ties by ascending doc id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not ids:
        return []
    scores = M @ np.asarray(q_emb, dtype=np.float64)
    top = topk_indices(scores, k)
    return [(ids[i], float(scores[i])) for i in top]


def topk_indices(scores, k):
    """Indices of the ``k`` largest scores, descending, ties by index."""
    n = scores.shape[0]
    if k >= n:
        return np.argsort(-scores, kind="stable")
    kth = np.partition(-scores, k - 1)[k - 1]
    cand = np.flatnonzero(-scores <= kth)
    order = cand[np.argsort(-scores[cand], kind="stable")]
    return order[:k]

"""Per-query replay memory of historical negatives.

Each training query owns up to ``capacity`` slots.  A slot stores the document
features together with the embedding that was in force when it was stored
(or last refreshed), so replay can run without re-encoding old documents.
"""

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .encoder import FeatureVector
from .geometry import isd_matrix

log = logging.getLogger(__name__)

MAGIC = b"L2RMEM01"


@dataclass
class MemoryEntry:
    doc_id: str
    features: FeatureVector
    embedding: np.ndarray
    session_stored: int = 0


@dataclass
class UpdateRecord:
    """What one memory update did for one query (anchor-ISD values)."""

    query_id: str
    anchors: list
    inserted: list = field(default_factory=list)  # (doc_id, isd)
    evicted: list = field(default_factory=list)  # (doc_id, isd)
    filled: list = field(default_factory=list)  # (doc_id, isd) placed in free slots

    def guarantee_holds(self):
        ins = [s for _, s in self.inserted + self.filled]
        ev = [s for _, s in self.evicted]
        return not ins or not ev or min(ins) >= max(ev)


class MemoryBuffer:
    def __init__(self, capacity, anchors=None, replace=None):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.anchors = int(anchors) if anchors is not None else self.capacity // 3
        self.replace = int(replace) if replace is not None else self.capacity // 3
        self.slots = {}
        self.seen = {}  # reservoir stream position per query

    def entries(self, query_id):
        return self.slots.get(query_id, [])

    def doc_ids(self, query_id):
        return [e.doc_id for e in self.entries(query_id)]

    def __len__(self):
        return sum(len(v) for v in self.slots.values())

    def queries(self):
        return list(self.slots)

    def reservoir_fill(self, query_id, stream, rng):
        """Classic reservoir sampling of ``stream`` into the query's slots.

        Items whose doc_id is already stored are skipped without advancing
        the stream position.
        """
        rng = np.random.default_rng(rng)
        slots = self.slots.setdefault(query_id, [])
        seen = self.seen.get(query_id, 0)
        for entry in stream:
            if any(e.doc_id == entry.doc_id for e in slots):
                continue
            seen += 1
            if len(slots) < self.capacity:
                slots.append(entry)
            else:
                j = int(rng.integers(0, seen))
                if j < self.capacity:
                    slots[j] = entry
        self.seen[query_id] = seen
        return self

    def select_memory_negatives(self, query_id, new_embeddings, q, n2, embeddings=None):
        """The ``n2`` stored entries most diverse from the new negatives.

        Diversity is ISD against ``new_embeddings``.  Entry embeddings are
        the stored ones unless ``embeddings`` (aligned with the slots)
        overrides them.  Ties go to the smaller doc_id.
        """
        entries = self.entries(query_id)
        if len(entries) <= n2:
            if len(entries) < n2:
                log.debug("query %s: only %d memory entries for n2=%d", query_id, len(entries), n2)
            return sorted(entries, key=lambda e: e.doc_id)
        E = np.vstack([e.embedding for e in entries]) if embeddings is None else np.asarray(embeddings)
        scores = isd_matrix(E, new_embeddings, q)
        order = sorted(range(len(entries)), key=lambda i: (-scores[i], entries[i].doc_id))
        return [entries[i] for i in order[:n2]]

    def random_memory_negatives(self, query_id, n2, rng):
        entries = self.entries(query_id)
        if len(entries) <= n2:
            return list(entries)
        picks = np.random.default_rng(rng).choice(len(entries), size=n2, replace=False)
        return [entries[i] for i in sorted(picks)]

    def update_query(self, query_id, candidates, q, rng):
        """Diversity-driven replacement for one query.

        Anchors are drawn uniformly from the current slots and are never
        evicted.  Buffer entries and candidates are scored by ISD against
        the anchors; free slots take the best candidates, then the
        ``replace`` lowest-scoring non-anchor entries are swapped for the
        highest-scoring remaining candidates while the candidate beats the
        entry it would replace.
        """
        rng = np.random.default_rng(rng)
        slots = self.slots.setdefault(query_id, [])
        stored = {e.doc_id for e in slots}
        fresh = {}
        for c in candidates:
            if c.doc_id not in stored:
                fresh.setdefault(c.doc_id, c)
        cands = list(fresh.values())
        if not cands:
            return UpdateRecord(query_id, [])
        if len(slots) <= self.anchors:
            anchor_idx = list(range(len(slots)))
        else:
            anchor_idx = sorted(rng.choice(len(slots), size=self.anchors, replace=False).tolist())
        rec = UpdateRecord(query_id, [slots[i].doc_id for i in anchor_idx])

        if anchor_idx:
            A = np.vstack([slots[i].embedding for i in anchor_idx])
            cand_isd = isd_matrix(np.vstack([c.embedding for c in cands]), A, q)
        else:
            cand_isd = np.zeros(len(cands))
        order = sorted(range(len(cands)), key=lambda i: (-cand_isd[i], cands[i].doc_id))
        ranked = [(cands[i], float(cand_isd[i])) for i in order]

        free = self.capacity - len(slots)
        for c, s in ranked[:free]:
            slots.append(c)
            rec.filled.append((c.doc_id, s))
        ranked = ranked[max(free, 0):]
        if not ranked or not anchor_idx:
            return rec

        anchor_set = set(anchor_idx)
        evictable = [i for i in range(len(slots)) if i not in anchor_set]
        if not evictable:
            return rec
        slot_isd = isd_matrix(np.vstack([slots[i].embedding for i in evictable]), A, q)
        victims = sorted(range(len(evictable)), key=lambda j: (slot_isd[j], slots[evictable[j]].doc_id))
        for (c, s), j in zip(ranked[: self.replace], victims):
            if s <= slot_isd[j]:
                break
            i = evictable[j]
            rec.evicted.append((slots[i].doc_id, float(slot_isd[j])))
            rec.inserted.append((c.doc_id, s))
            slots[i] = c
        return rec

    def random_update_query(self, query_id, candidates, rng):
        """Replace up to ``replace`` random slots with random candidates."""
        rng = np.random.default_rng(rng)
        slots = self.slots.setdefault(query_id, [])
        stored = {e.doc_id for e in slots}
        cands = list({c.doc_id: c for c in candidates if c.doc_id not in stored}.values())
        rng.shuffle(cands)
        free = self.capacity - len(slots)
        slots.extend(cands[:free])
        rest = cands[max(free, 0): max(free, 0) + self.replace]
        if rest:
            for i, c in zip(rng.choice(len(slots), size=len(rest), replace=False), rest):
                slots[i] = c

    def refresh(self, embed_entries):
        """Replace stored embeddings with ``embed_entries(entries)`` per query."""
        for entries in self.slots.values():
            if entries:
                E = embed_entries(entries)
                for e, v in zip(entries, E):
                    e.embedding = np.asarray(v, dtype=np.float64)

    def save(self, path):
        """Binary snapshot: header, per-query reservoir counters, then one
        record per slot (query_id, doc_id, session_stored, features, embedding)."""
        dims = {e.embedding.size for v in self.slots.values() for e in v}
        dim = dims.pop() if dims else 0
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<qqqq", self.capacity, self.anchors, self.replace, dim))
            fh.write(struct.pack("<q", len(self.seen)))
            for qid, n in self.seen.items():
                _write_str(fh, qid)
                fh.write(struct.pack("<q", n))
            fh.write(struct.pack("<q", len(self.slots)))
            for qid, entries in self.slots.items():
                _write_str(fh, qid)
                fh.write(struct.pack("<q", len(entries)))
                for e in entries:
                    _write_str(fh, e.doc_id)
                    fh.write(struct.pack("<qq", e.session_stored, len(e.features)))
                    fh.write(e.features.indices.astype("<i8").tobytes())
                    fh.write(e.features.weights.astype("<f8").tobytes())
                    fh.write(np.asarray(e.embedding, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            if fh.read(len(MAGIC)) != MAGIC:
                raise ValueError(f"{path}: not a memory snapshot")
            capacity, anchors, replace, dim = struct.unpack("<qqqq", fh.read(32))
            buf = cls(capacity, anchors, replace)
            (n_seen,) = struct.unpack("<q", fh.read(8))
            for _ in range(n_seen):
                qid = _read_str(fh)
                (buf.seen[qid],) = struct.unpack("<q", fh.read(8))
            (n_q,) = struct.unpack("<q", fh.read(8))
            for _ in range(n_q):
                qid = _read_str(fh)
                (n_e,) = struct.unpack("<q", fh.read(8))
                entries = buf.slots.setdefault(qid, [])
                for _ in range(n_e):
                    doc_id = _read_str(fh)
                    session, nf = struct.unpack("<qq", fh.read(16))
                    idx = np.frombuffer(fh.read(8 * nf), dtype="<i8").astype(np.int64)
                    w = np.frombuffer(fh.read(8 * nf), dtype="<f8").astype(np.float64)
                    emb = np.frombuffer(fh.read(8 * dim), dtype="<f8").astype(np.float64)
                    entries.append(MemoryEntry(doc_id, FeatureVector(idx, w), emb, session))
        return buf


class TempMemory:
    """Candidates collected during a session, deduplicated per query."""

    def __init__(self):
        self.pending = {}

    def add(self, query_id, entries):
        bucket = self.pending.setdefault(query_id, {})
        for e in entries:
            bucket.setdefault(e.doc_id, e)

    def candidates(self, query_id):
        return list(self.pending.get(query_id, {}).values())

    def queries(self):
        return list(self.pending)

    def clear(self):
        self.pending.clear()

    def __len__(self):
        return sum(len(v) for v in self.pending.values())


def update_memory(buffer, temp, query_embeddings, rng, candidate_embeddings=None):
    """Run the per-query diversity update for every query in ``temp`` and
    empty it.  ``candidate_embeddings`` (doc_id -> vector) replaces the
    candidates' embeddings when given.  Returns the update records."""
    rng = np.random.default_rng(rng)
    records = []
    for qid in temp.queries():
        cands = temp.candidates(qid)
        if candidate_embeddings is not None:
            cands = [
                MemoryEntry(c.doc_id, c.features, np.asarray(candidate_embeddings[c.doc_id], dtype=np.float64), c.session_stored)
                for c in cands
            ]
        records.append(buffer.update_query(qid, cands, query_embeddings[qid], rng))
    temp.clear()
    return records


def _write_str(fh, s):
    b = s.encode("utf-8")
    fh.write(struct.pack("<q", len(b)))
    fh.write(b)


def _read_str(fh):
    (n,) = struct.unpack("<q", fh.read(8))
    return fh.read(n).decode("utf-8")

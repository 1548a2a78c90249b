"""Okapi BM25 over an incrementally grown inverted index."""

import math
import re
from collections import Counter

import numpy as np

MAGIC = "L2R-BM25-INDEX v1"

_TOKEN_RE = re.compile(r"[0-9a-z]+")


def tokenize(text):
    """Lowercase and split on anything that is not a letter or digit."""
    return _TOKEN_RE.findall(text.lower())


class DuplicateDocumentError(ValueError):
    pass


class InvertedIndex:
    def __init__(self, k1=0.8, b=0.72):
        self.k1 = float(k1)
        self.b = float(b)
        self.postings = {}  # term -> list of (doc_id, tf)
        self.doc_lengths = {}
        self._total_len = 0
        self._doc_tf = {}
        self._arrays = {}  # term -> (doc positions, tf) cache
        self._doc_ids = []
        self._pos = {}
        self._lengths = None

    @property
    def doc_count(self):
        return len(self.doc_lengths)

    @property
    def avg_doc_len(self):
        return self._total_len / self.doc_count if self.doc_count else 0.0

    def __contains__(self, doc_id):
        return doc_id in self.doc_lengths

    def __len__(self):
        return self.doc_count

    def add_documents(self, docs):
        """Index ``(doc_id, tokens)`` pairs.  The whole batch is rejected if
        any id is already present or repeated within the batch."""
        docs = list(docs)
        seen = set()
        for doc_id, _ in docs:
            if doc_id in self.doc_lengths or doc_id in seen:
                raise DuplicateDocumentError(f"document {doc_id!r} already indexed")
            seen.add(doc_id)
        for doc_id, tokens in docs:
            tf = Counter(tokens)
            self._pos[doc_id] = len(self._doc_ids)
            self._doc_ids.append(doc_id)
            self.doc_lengths[doc_id] = len(tokens)
            self._total_len += len(tokens)
            self._doc_tf[doc_id] = tf
            self._lengths = None
            for term, f in tf.items():
                self.postings.setdefault(term, []).append((doc_id, f))
                self._arrays.pop(term, None)
        return self

    def _term_arrays(self, term):
        arr = self._arrays.get(term)
        if arr is None:
            plist = self.postings[term]
            pos = np.fromiter((self._pos[d] for d, _ in plist), dtype=np.int64, count=len(plist))
            tf = np.fromiter((f for _, f in plist), dtype=np.float64, count=len(plist))
            arr = self._arrays[term] = (pos, tf)
        return arr

    def idf(self, term):
        df = len(self.postings.get(term, ()))
        n = self.doc_count
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def scores(self, query_tokens):
        """Dense BM25 score vector over all indexed docs (insertion order)."""
        n = self.doc_count
        out = np.zeros(n)
        if n == 0:
            return out
        if self._lengths is None:
            self._lengths = np.fromiter(
                (self.doc_lengths[d] for d in self._doc_ids), dtype=np.float64, count=n
            )
        norm = self.k1 * (1.0 - self.b + self.b * self._lengths / self.avg_doc_len)
        for term, qtf in Counter(query_tokens).items():
            if term not in self.postings:
                continue
            pos, tf = self._term_arrays(term)
            out[pos] += qtf * self.idf(term) * tf * (self.k1 + 1.0) / (tf + norm[pos])
        return out

    def bm25_topk(self, query_tokens, k, restrict_to=None):
        """Top-``k`` ``(doc_id, score)`` pairs, score descending then doc_id.

        Only documents sharing at least one term with the query are
        returned.  ``restrict_to`` limits the candidates to a set of ids.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        matched = set()
        for term in set(query_tokens):
            if term in self.postings:
                matched.update(self._term_arrays(term)[0].tolist())
        if restrict_to is not None:
            matched = {p for p in matched if self._doc_ids[p] in restrict_to}
        if not matched:
            return []
        scores = self.scores(query_tokens)
        hits = sorted(((-scores[p], self._doc_ids[p]) for p in matched))
        return [(d, float(-s)) for s, d in hits[:k]]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{MAGIC}\n")
            fh.write(f"k1={self.k1!r}\tb={self.b!r}\tdocs={self.doc_count}\n")
            for doc_id in self._doc_ids:
                tf = self._doc_tf[doc_id]
                terms = " ".join(f"{t}:{f}" for t, f in tf.items())
                fh.write(f"{doc_id}\t{self.doc_lengths[doc_id]}\t{terms}\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n")
            if header != MAGIC:
                raise ValueError(f"{path}: not a BM25 index file (header {header!r})")
            params = dict(kv.split("=", 1) for kv in fh.readline().rstrip("\n").split("\t"))
            index = cls(k1=float(params["k1"]), b=float(params["b"]))
            docs = []
            for lineno, line in enumerate(fh, start=3):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3:
                    raise ValueError(f"{path}:{lineno}: malformed index line")
                doc_id, length, terms = parts
                tokens = []
                for item in terms.split():
                    term, f = item.rsplit(":", 1)
                    tokens.extend([term] * int(f))
                if len(tokens) != int(length):
                    raise ValueError(f"{path}:{lineno}: length mismatch for {doc_id}")
                docs.append((doc_id, tokens))
        return index.add_documents(docs)

"""Toy dual encoder: hashed bag-of-tokens features through a linear map.

Each tower maps a sparse feature vector ``x`` to ``W.T @ x``; relevance is the
dot product of the query and document embeddings.
"""

import hashlib
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

TOWERS = ("query", "document")
CHECKPOINT_MAGIC = b"L2RENC01"


@dataclass(frozen=True)
class FeatureVector:
    indices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        w = np.asarray(self.weights, dtype=np.float64)
        if idx.shape != w.shape or idx.ndim != 1:
            raise ValueError("indices and weights must be 1-D and equally long")
        if idx.size > 1 and np.any(np.diff(idx) <= 0):
            raise ValueError("feature indices must be strictly increasing")
        if not np.all(np.isfinite(w)):
            raise ValueError("feature weights must be finite")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return int(self.indices.size)

    def scaled(self, alpha):
        return FeatureVector(self.indices, self.weights * alpha)

    def to_dense(self, F):
        out = np.zeros(F)
        out[self.indices] = self.weights
        return out

    @classmethod
    def from_dense(cls, x):
        x = np.asarray(x, dtype=np.float64)
        nz = np.flatnonzero(x)
        return cls(nz, x[nz])


@lru_cache(maxsize=1 << 20)
def _token_hash(token):
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=16).digest()
    bucket, signbits = struct.unpack("<QQ", digest)
    return bucket, 1.0 if signbits & 1 else -1.0


def featurize(tokens, F):
    """Signed feature hashing into ``F`` buckets, L2-normalized when nonzero."""
    if F < 1:
        raise ValueError("hash space size F must be positive")
    acc = {}
    for tok in tokens:
        bucket, sign = _token_hash(tok)
        i = bucket % F
        acc[i] = acc.get(i, 0.0) + sign
    idx = np.array(sorted(acc), dtype=np.int64)
    w = np.array([acc[i] for i in idx], dtype=np.float64)
    keep = w != 0.0
    idx, w = idx[keep], w[keep]
    norm = np.linalg.norm(w)
    if norm > 0:
        w = w / norm
    return FeatureVector(idx, w)


def feature_matrix(features, F):
    """Stack feature vectors into a CSR matrix of shape (len(features), F)."""
    indptr = np.zeros(len(features) + 1, dtype=np.int64)
    np.cumsum([len(x) for x in features], out=indptr[1:])
    if features:
        indices = np.concatenate([x.indices for x in features])
        data = np.concatenate([x.weights for x in features])
    else:
        indices = np.zeros(0, dtype=np.int64)
        data = np.zeros(0)
    if indices.size and indices.max() >= F:
        raise ValueError(f"feature index {int(indices.max())} out of range for F={F}")
    return sp.csr_matrix((data, indices, indptr), shape=(len(features), F))


@dataclass
class Gradients:
    """Sparse row gradients for the two towers.

    Rows may repeat; repeated rows are summed when applied or densified.
    """

    dim: int
    query_rows: list = field(default_factory=list)
    query_vals: list = field(default_factory=list)
    doc_rows: list = field(default_factory=list)
    doc_vals: list = field(default_factory=list)

    def add(self, tower, x, grad_embedding):
        rows, vals = _outer(x, grad_embedding)
        if tower == "query":
            self.query_rows.append(rows)
            self.query_vals.append(vals)
        elif tower == "document":
            self.doc_rows.append(rows)
            self.doc_vals.append(vals)
        else:
            raise ValueError(f"unknown tower {tower!r}")

    def extend(self, other, scale=1.0):
        self.query_rows += other.query_rows
        self.query_vals += [v * scale for v in other.query_vals]
        self.doc_rows += other.doc_rows
        self.doc_vals += [v * scale for v in other.doc_vals]
        return self

    def scaled(self, scale):
        return Gradients(self.dim).extend(self, scale)

    def rows(self, tower):
        r = self.query_rows if tower == "query" else self.doc_rows
        v = self.query_vals if tower == "query" else self.doc_vals
        if not r:
            return np.zeros(0, dtype=np.int64), np.zeros((0, self.dim))
        return np.concatenate(r), np.vstack(v)

    def touched_rows(self, tower):
        return np.unique(self.rows(tower)[0])

    def norm(self):
        """Frobenius norm with repeated rows summed first."""
        total = 0.0
        for tower in TOWERS:
            rows, vals = self.rows(tower)
            if rows.size:
                uniq, inv = np.unique(rows, return_inverse=True)
                acc = np.zeros((uniq.size, self.dim))
                np.add.at(acc, inv, vals)
                total += float(np.sum(acc * acc))
        return float(np.sqrt(total))

    def to_dense(self, params):
        """Dense gradients keyed like ``params.arrays()``."""
        out = {name: np.zeros_like(a) for name, a in params.arrays().items()}
        for tower in TOWERS:
            rows, vals = self.rows(tower)
            np.add.at(out[params.array_name(tower)], rows, vals)
        return out


def _outer(x, g):
    g = np.asarray(g, dtype=np.float64)
    return x.indices.copy(), x.weights[:, None] * g[None, :]


class DualEncoder:
    """Query and document towers, each an ``F x dim`` matrix.

    With ``shared=True`` both towers use one matrix.
    """

    def __init__(self, F, dim, seed=0, shared=False):
        if F < 1 or dim < 1:
            raise ValueError("F and dim must be positive")
        self.F = int(F)
        self.dim = int(dim)
        self.shared = bool(shared)
        self.version_tag = 0
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(self.F)
        W = rng.uniform(-bound, bound, size=(self.F, self.dim))
        self.W_q = W
        self.W_d = W if self.shared else W.copy()

    def copy(self):
        new = object.__new__(DualEncoder)
        new.F, new.dim, new.shared, new.version_tag = self.F, self.dim, self.shared, self.version_tag
        new.W_q = self.W_q.copy()
        new.W_d = new.W_q if self.shared else self.W_d.copy()
        return new

    def weights(self, tower):
        if tower == "query":
            return self.W_q
        if tower == "document":
            return self.W_d
        raise ValueError(f"unknown tower {tower!r}")

    def arrays(self):
        if self.shared:
            return {"shared": self.W_q}
        return {"query": self.W_q, "document": self.W_d}

    def array_name(self, tower):
        return "shared" if self.shared else tower

    def encode(self, x, tower):
        if len(x) and x.indices[-1] >= self.F:
            raise ValueError(f"feature index {int(x.indices[-1])} out of range for F={self.F}")
        W = self.weights(tower)
        return x.weights @ W[x.indices] if len(x) else np.zeros(self.dim)

    def encode_many(self, features, tower):
        """Embeddings for a list of feature vectors (or a CSR matrix)."""
        X = features if sp.issparse(features) else feature_matrix(features, self.F)
        return np.asarray(X @ self.weights(tower))

    def encode_backward(self, x, tower, grad_embedding):
        """Gradient of a scalar loss w.r.t. the tower weights, given the
        gradient w.r.t. the embedding ``encode(x, tower)``."""
        g = np.asarray(grad_embedding, dtype=np.float64)
        if g.shape != (self.dim,):
            raise ValueError(f"gradient shape {g.shape} does not match dim {self.dim}")
        grads = Gradients(self.dim)
        grads.add(tower, x, g)
        return grads

    def apply(self, grads, lr, clip_norm=None):
        """Plain SGD step; with ``clip_norm`` the step direction is rescaled
        so the gradient norm never exceeds it."""
        if clip_norm is not None:
            g = grads.norm()
            if g > clip_norm:
                lr = lr * clip_norm / g
        for tower in ("query", "document"):
            rows, vals = grads.rows(tower)
            if rows.size:
                np.add.at(self.weights(tower), rows, -lr * vals)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<qqqB", self.F, self.dim, self.version_tag, self.shared))
            for a in self.arrays().values():
                fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
                raise ValueError(f"{path}: not an encoder checkpoint")
            F, dim, version, shared = struct.unpack("<qqqB", fh.read(25))
            enc = object.__new__(cls)
            enc.F, enc.dim, enc.version_tag, enc.shared = F, dim, version, bool(shared)
            n = F * dim * 8

            def read():
                buf = fh.read(n)
                if len(buf) != n:
                    raise ValueError(f"{path}: truncated checkpoint")
                return np.frombuffer(buf, dtype="<f8").reshape(F, dim).copy()

            enc.W_q = read()
            enc.W_d = enc.W_q if enc.shared else read()
        return enc


def score(q_emb, d_emb):
    q = np.asarray(q_emb, dtype=np.float64)
    d = np.asarray(d_emb, dtype=np.float64)
    if q.shape != d.shape:
        raise ValueError(f"dimension mismatch: {q.shape} vs {d.shape}")
    return float(q @ d)

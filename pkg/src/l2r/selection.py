"""Choosing negatives from newly arrived documents.

A lexical pre-filter keeps the BM25 top hits from the current session; a
uniform subsample of those forms the candidate pool, and the final negatives
maximize a convex mix of PSS and ISD scored with the latest encoder.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import isd_matrix, pss_many

log = logging.getLogger(__name__)


@dataclass
class SelectionConfig:
    alpha: float = 0.6
    n1: int = 3
    bm25_pool_size: int = 200
    upsample_factor: int = 2

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.n1 < 1:
            raise ValueError("n1 must be >= 1")
        if self.bm25_pool_size < self.upsample_factor * self.n1:
            raise ValueError("bm25_pool_size must be >= upsample_factor * n1")

    @property
    def pool_size(self):
        return self.upsample_factor * self.n1


def bm25_candidates(query_tokens, session_doc_ids, index, pool_size, exclude=()):
    """BM25 top-``pool_size`` doc ids from the session, known positives removed."""
    exclude = set(exclude)
    hits = index.bm25_topk(query_tokens, pool_size + len(exclude), restrict_to=session_doc_ids)
    return [d for d, _ in hits if d not in exclude][:pool_size]


def subsample(ids, size, rng):
    """Uniform subsample without replacement, original order kept."""
    if len(ids) <= size:
        return list(ids)
    keep = np.random.default_rng(rng).choice(len(ids), size=size, replace=False)
    return [ids[i] for i in sorted(keep)]


def candidate_pool(query_tokens, session_doc_ids, index, cfg, rng, exclude=()):
    """BM25 hits from the session, minus known positives, uniformly
    subsampled to ``cfg.upsample_factor * cfg.n1`` ids (BM25 rank order)."""
    ids = bm25_candidates(query_tokens, session_doc_ids, index, cfg.bm25_pool_size, exclude)
    return subsample(ids, cfg.pool_size, rng)


def selection_scores(pool_embeddings, q, d_pos, alpha):
    """alpha * PSS(d, d+; q) + (1 - alpha) * ISD(d, pool; q) for each pool row."""
    P = np.asarray(pool_embeddings, dtype=np.float64)
    total = np.zeros(len(P))
    if alpha > 0:
        total += alpha * pss_many(P, d_pos, q)
    if alpha < 1:
        total += (1 - alpha) * isd_matrix(P, P, q)
    return total


def select_new_negatives(pool_ids, pool_embeddings, q, d_pos, cfg):
    """The ``cfg.n1`` pool members with the highest joint score, one shot.

    Ties go to the smaller doc_id.  Returns doc ids ordered by score.
    """
    if len(pool_ids) == 0:
        return []
    if len(pool_ids) < cfg.n1:
        log.debug("short selection: pool of %d for n1=%d", len(pool_ids), cfg.n1)
    scores = selection_scores(pool_embeddings, q, d_pos, cfg.alpha)
    order = sorted(range(len(pool_ids)), key=lambda i: (-scores[i], pool_ids[i]))
    return [pool_ids[i] for i in order[: cfg.n1]]


def random_negatives(pool_ids, n, rng):
    return subsample(pool_ids, n, rng)

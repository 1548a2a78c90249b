"""Training objectives for the dual encoder with analytic gradients.

Candidate order inside every instance is ``[positive] + new + memory``.
"""

from dataclasses import dataclass, field

import numpy as np

from .encoder import Gradients

ALIGN_KINDS = ("none", "embedding", "ranking")


@dataclass
class TrainingInstance:
    query: object
    positive: object
    new_negatives: list = field(default_factory=list)
    memory_negatives: list = field(default_factory=list)
    positive_frozen: object = None
    memory_frozen: list = None
    mode: str = "no_compat"

    @property
    def num_candidates(self):
        return 1 + len(self.new_negatives) + len(self.memory_negatives)

    def frozen_old(self):
        """Frozen embeddings of the positive and memory negatives, stacked."""
        if self.positive_frozen is None:
            raise ValueError("missing frozen embedding for the positive document")
        mem = self.memory_frozen if self.memory_frozen is not None else []
        if len(mem) != len(self.memory_negatives):
            raise ValueError("missing frozen embedding for a memory document")
        rows = [np.asarray(self.positive_frozen, dtype=np.float64)]
        rows += [np.asarray(e, dtype=np.float64) for e in mem]
        return np.vstack(rows)


@dataclass
class LossConfig:
    lam: float = 1.0
    align_kind: str = "ranking"
    stop_grad_compat_dist: bool = False

    def __post_init__(self):
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError("lambda must be finite and non-negative")
        if self.align_kind not in ALIGN_KINDS:
            raise ValueError(f"align_kind must be one of {ALIGN_KINDS}")


def log_softmax(s):
    s = np.asarray(s, dtype=np.float64)
    m = s.max()
    return s - m - np.log(np.exp(s - m).sum())


class _Forward:
    """Embeddings shared by all losses for one instance."""

    def __init__(self, inst, params):
        self.inst = inst
        self.params = params
        self.q = params.encode(inst.query, "query")
        self.docs = [inst.positive, *inst.new_negatives, *inst.memory_negatives]
        self.n_new = len(inst.new_negatives)
        self.live = params.encode_many(self.docs, "document")
        self._old_idx = np.r_[0, np.arange(1 + self.n_new, len(self.docs))]
        self._new_idx = np.arange(1, 1 + self.n_new)

    def compat_embeddings(self):
        """Frozen rows for the positive and memory docs, live rows for new docs."""
        U = self.live.copy()
        U[self._old_idx] = self.inst.frozen_old()
        return U

    def backprop(self, d_q, d_live):
        """Turn embedding gradients into sparse parameter gradients."""
        grads = Gradients(self.params.dim)
        grads.add("query", self.inst.query, d_q)
        for x, g in zip(self.docs, d_live):
            if np.any(g):
                grads.add("document", x, g)
        return grads


def _check_finite(s):
    if not np.all(np.isfinite(s)):
        raise FloatingPointError("non-finite scores")


def _softmax_ce(U, q):
    """-log softmax(U q)[0] and its gradient w.r.t. the scores."""
    s = U @ q
    _check_finite(s)
    logp = log_softmax(s)
    g = np.exp(logp)
    g[0] -= 1.0
    return -logp[0], g


def contrastive_loss(inst, params):
    """Cross entropy of the positive against new and memory negatives,
    every candidate scored with the current towers."""
    fw = _Forward(inst, params)
    loss, g = _softmax_ce(fw.live, fw.q)
    return loss, fw.backprop(fw.live.T @ g, np.outer(g, fw.q))


def rank_loss_compat(inst, params):
    """Contrastive loss scoring the positive and memory docs with their
    frozen embeddings; only new negatives reach the document tower."""
    fw = _Forward(inst, params)
    U = fw.compat_embeddings()
    loss, g = _softmax_ce(U, fw.q)
    d_live = np.zeros_like(fw.live)
    d_live[fw._new_idx] = np.outer(g[fw._new_idx], fw.q)
    return loss, fw.backprop(U.T @ g, d_live)


def embed_align_loss(inst, params):
    """Half squared distance between current and frozen embeddings of the
    positive and memory docs."""
    fw = _Forward(inst, params)
    d_live = np.zeros_like(fw.live)
    diff = fw.live[fw._old_idx] - inst.frozen_old()
    d_live[fw._old_idx] = diff
    loss = 0.5 * float(np.sum(diff * diff))
    return loss, fw.backprop(np.zeros(params.dim), d_live)


def _rank_align(fw, stop_grad=False):
    U = fw.compat_embeddings()
    s_compat = U @ fw.q
    s_live = fw.live @ fw.q
    _check_finite(s_compat)
    _check_finite(s_live)
    logp = log_softmax(s_compat)
    logp_live = log_softmax(s_live)
    p = np.exp(logp)
    p_live = np.exp(logp_live)
    a = logp - logp_live
    kl = float(p @ a)
    if not np.isfinite(kl):
        raise FloatingPointError("non-finite KL divergence")
    g_compat = np.zeros_like(p) if stop_grad else p * (a - kl)
    g_live = p_live - p
    d_q = U.T @ g_compat + fw.live.T @ g_live
    d_live = np.outer(g_live, fw.q)
    d_live[fw._new_idx] += np.outer(g_compat[fw._new_idx], fw.q)
    return max(kl, 0.0), d_q, d_live


def rank_align_loss(inst, params, stop_grad=False):
    """KL(p || p') between the compatible ranking distribution ``p`` (frozen
    old embeddings) and the fully re-encoded distribution ``p'``.

    Gradients flow through both distributions unless ``stop_grad``.
    """
    fw = _Forward(inst, params)
    kl, d_q, d_live = _rank_align(fw, stop_grad)
    return kl, fw.backprop(d_q, d_live)


def total_compat_loss(inst, params, cfg):
    rank, g_rank = rank_loss_compat(inst, params)
    if cfg.align_kind == "none" or cfg.lam == 0.0:
        return rank, g_rank
    if cfg.align_kind == "embedding":
        align, g_align = embed_align_loss(inst, params)
    else:
        align, g_align = rank_align_loss(inst, params, cfg.stop_grad_compat_dist)
    return rank + cfg.lam * align, g_rank.extend(g_align, cfg.lam)


def batch_loss(loss_fn, instances, params):
    """Mean loss and gradient over a batch, reduced in input order."""
    if not instances:
        raise ValueError("empty batch")
    total = 0.0
    grads = Gradients(params.dim)
    scale = 1.0 / len(instances)
    for inst in instances:
        loss, g = loss_fn(inst, params)
        total += loss
        grads.extend(g, scale)
    return total * scale, grads


def finite_diff_check(loss_fn, inst, params, epsilon=1e-4, n_samples=40, seed=0):
    """Max relative error between analytic and central-difference gradients.

    ``params.arrays()`` must expose the mutable parameter arrays and
    ``loss_fn(inst, params)`` must return ``(loss, grads)`` with
    ``grads.to_dense(params)`` (or a dict) keyed the same way.  Coordinates
    are sampled from the rows the analytic gradient touches plus random
    rows.  The error is |a - n| / max(|a|, |n|, 1e-6).
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-6, 1e-3]")
    rng = np.random.default_rng(seed)
    _, grads = loss_fn(inst, params)
    dense = grads if isinstance(grads, dict) else grads.to_dense(params)
    worst = 0.0
    for name, arr in params.arrays().items():
        g = dense[name]
        flat_g = g.reshape(-1)
        flat = arr.reshape(-1)
        support = np.flatnonzero(flat_g)
        picks = rng.choice(support, size=min(n_samples, support.size), replace=False) if support.size else []
        extra = rng.integers(0, flat.size, size=max(1, n_samples // 4))
        for i in np.concatenate([np.asarray(picks, dtype=np.int64), extra]):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = loss_fn(inst, params)[0]
            flat[i] = orig - epsilon
            down = loss_fn(inst, params)[0]
            flat[i] = orig
            num = (up - down) / (2 * epsilon)
            ana = flat_g[i]
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-6)
            worst = max(worst, err)
    return worst

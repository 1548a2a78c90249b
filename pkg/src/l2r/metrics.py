"""Retrieval metrics and lifelong-learning summaries over a performance grid.

``p[i][j]`` is the score on session ``j``'s test queries after training
through session ``i``.
"""

import csv
import io
import json

import numpy as np

RANK_KINDS = ("recall", "success", "mrr")


def rank_metric(kind, N, ranking, relevant):
    if N < 1:
        raise ValueError("cutoff N must be >= 1")
    relevant = set(relevant)
    if not relevant:
        raise ValueError("empty relevant set")
    top = list(ranking)[:N]
    if kind == "recall":
        return len(relevant.intersection(top)) / len(relevant)
    if kind == "success":
        return 1.0 if relevant.intersection(top) else 0.0
    if kind == "mrr":
        for rank, d in enumerate(top, start=1):
            if d in relevant:
                return 1.0 / rank
        return 0.0
    raise ValueError(f"unknown metric kind {kind!r}")


def metric_name(kind, N):
    return {"recall": "R", "success": "S", "mrr": "MRR"}[kind] + f"@{N}"


def parse_metric(name):
    """'S@5' -> ('success', 5)."""
    head, _, n = name.partition("@")
    kinds = {"R": "recall", "S": "success", "MRR": "mrr"}
    if head not in kinds or not n.isdigit():
        raise ValueError(f"bad metric name {name!r}")
    return kinds[head], int(n)


class MissingCellError(KeyError):
    pass


class PerfMatrix:
    def __init__(self, T, metric="S@5"):
        self.T = int(T)
        self.metric = metric
        self.values = np.full((self.T + 1, self.T + 1), np.nan)

    @classmethod
    def from_array(cls, arr, metric="S@5"):
        arr = np.asarray(arr, dtype=np.float64)
        m = cls(arr.shape[0] - 1, metric)
        m.values[...] = arr
        return m

    def __setitem__(self, ij, v):
        v = float(v)
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"performance {v} outside [0, 1]")
        self.values[ij] = v

    def __getitem__(self, ij):
        v = self.values[ij]
        if np.isnan(v):
            raise MissingCellError(f"missing performance cell p[{ij[0]}][{ij[1]}]")
        return float(v)

    @property
    def mask(self):
        return ~np.isnan(self.values)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "i", "j", "value"])
        for i in range(self.T + 1):
            for j in range(self.T + 1):
                if self.mask[i, j]:
                    w.writerow([self.metric, i, j, repr(float(self.values[i, j]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.DictReader(io.StringIO(text)))
        T = max(max(int(r["i"]), int(r["j"])) for r in rows)
        m = cls(T, rows[0]["metric"])
        for r in rows:
            m.values[int(r["i"]), int(r["j"])] = float(r["value"])
        return m


def average_performance(m):
    if m.T < 1:
        raise ValueError("AP needs at least one upcoming session")
    return sum(m[t, t] for t in range(1, m.T + 1)) / m.T


def forgetting(m, t):
    if t < 1:
        raise ValueError("forgetting is defined for t >= 1")
    total = 0.0
    for j in range(t):
        total += max(m[l, j] - m[t, j] for l in range(t))
    return total / t


def forward_transfer(m):
    if m.T < 2:
        raise ValueError("FWT needs at least two upcoming sessions")
    pairs = [(i, j) for j in range(2, m.T + 1) for i in range(1, j)]
    return sum(m[i, j] for i, j in pairs) / (m.T * (m.T - 1) / 2)


def lifelong_summary(m, t=None):
    """P_t, AP, Forget_t and FWT; quantities undefined for the grid size are None."""
    t = m.T if t is None else t
    return {
        "P_t": m[t, t],
        "AP": average_performance(m) if m.T >= 1 else None,
        "Forget_t": forgetting(m, t) if t >= 1 else None,
        "FWT": forward_transfer(m) if m.T >= 2 else None,
    }


def summaries_json(matrices, t=None):
    return json.dumps({name: lifelong_summary(m, t) for name, m in matrices.items()}, indent=2, sort_keys=True)

"""
A replay memory that prefers diversity
======================================

Each training query owns a small buffer of past negatives.  The initial
session fills it by reservoir sampling; later sessions swap in new
candidates only when they sit farther from a few randomly chosen anchors
than the entries they displace.
"""

import numpy as np

from l2r.encoder import FeatureVector
from l2r.memory import MemoryBuffer, MemoryEntry, TempMemory, update_memory

rng = np.random.default_rng(0)


def entry(name, emb, session=0):
    return MemoryEntry(name, FeatureVector([], []), np.asarray(emb, dtype=float), session)


buf = MemoryBuffer(capacity=6)
stream = [entry(f"old{i:02d}", rng.normal(scale=0.3, size=3)) for i in range(40)]
buf.reservoir_fill("q1", stream, rng)
print("after reservoir:", buf.doc_ids("q1"))

# New candidates: a tight cluster near the old ones and two outliers.
temp = TempMemory()
temp.add("q1", [entry(f"new{i}", rng.normal(scale=0.3, size=3), 1) for i in range(3)])
temp.add("q1", [entry("out0", [0.0, 4.0, 0.0], 1), entry("out1", [0.0, 0.0, -5.0], 1)])
q = np.array([1.0, 0.0, 0.0])
(record,) = update_memory(buf, temp, {"q1": q}, rng)
print("anchors: ", record.anchors)
print("inserted:", [(d, round(s, 2)) for d, s in record.inserted])
print("evicted: ", [(d, round(s, 2)) for d, s in record.evicted])
print("guarantee holds:", record.guarantee_holds())

# At training time the buffer hands back its most diverse entries with
# respect to the freshly selected negatives.
picked = buf.select_memory_negatives("q1", rng.normal(size=(3, 3)), q, n2=2)
print("memory negatives:", [e.doc_id for e in picked])

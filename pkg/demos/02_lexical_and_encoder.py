"""
From tokens to scores
=====================

BM25 proposes candidates from the newly arrived documents; the dual encoder
maps hashed bag-of-token features to dense vectors and scores them by dot
product.
"""

import numpy as np

from l2r.encoder import DualEncoder, featurize, score
from l2r.lexical import InvertedIndex, tokenize

docs = {
    "d1": "reservoir sampling keeps a uniform sample of a stream",
    "d2": "dense retrieval encodes queries and passages separately",
    "d3": "bm25 weights term frequency with document length",
    "d4": "streams of passages arrive in sessions",
}
index = InvertedIndex()
index.add_documents((d, tokenize(t)) for d, t in docs.items())

query = tokenize("sampling passages from a stream")
for doc_id, s in index.bm25_topk(query, 3):
    print(f"bm25 {doc_id} {s:.3f}")

# Restricting to one session is how the candidate pool stays fresh.
print("session-only:", index.bm25_topk(query, 3, restrict_to={"d2", "d4"}))

# Signed feature hashing; collisions are possible but rare at F = 2**12.
F = 1 << 12
enc = DualEncoder(F, dim=16, seed=0)
xq = featurize(query, F)
for doc_id, text in docs.items():
    xd = featurize(tokenize(text), F)
    print(doc_id, f"{score(enc.encode(xq, 'query'), enc.encode(xd, 'document')):+.5f}")

# Untrained weights are uniform in +-1/sqrt(F), so the scores above are tiny.
print("weight scale:", float(np.abs(enc.W_q).max()))

"""Query-relative projections and the two selection criteria built on them.

Every embedding is split into the part along the query direction and the part
orthogonal to it.  Positive sample superiority (PSS) compares the along-query
parts of a candidate and the labeled positive; inter sample diversity (ISD)
averages distances between the orthogonal parts.

All arithmetic runs in float64.
"""

from collections import Counter

import numpy as np

# Invocation counts of the selection criteria, for instrumentation.
CALLS = Counter()


class DegenerateQueryError(ValueError):
    pass


def as_embedding(x):
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"embedding must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("embedding has non-finite components")
    return v


def _unit_query(q):
    q = as_embedding(q)
    norm = np.linalg.norm(q)
    if norm == 0.0:
        raise DegenerateQueryError("degenerate query embedding")
    return q / norm


def scalar_proj(d, q):
    """Signed length of ``d`` along ``q``: (q . d) / |q|."""
    return float(np.dot(as_embedding(d), _unit_query(q)))


def proj_parallel(d, q):
    u = _unit_query(q)
    return np.dot(as_embedding(d), u) * u


def proj_perp(d, q):
    d = as_embedding(d)
    return d - proj_parallel(d, q)


def _sign(x):
    # sign(0) is taken as +1
    return np.where(x >= 0.0, 1.0, -1.0)


def pss(d, d_pos, q):
    """Positive sample superiority of ``d_pos`` over ``d`` for query ``q``.

    With a = scalar_proj(d_pos, q) and b = scalar_proj(d, q) the value is
    sign(a) * (a - b); large values mean ``d`` is unlikely to be an
    unlabeled positive.
    """
    CALLS["pss"] += 1
    u = _unit_query(q)
    a = float(np.dot(as_embedding(d_pos), u))
    b = float(np.dot(as_embedding(d), u))
    return float(_sign(a) * (a - b))


def isd(d, others, q):
    """Mean distance between the query-orthogonal parts of ``d`` and ``others``."""
    others = np.asarray(others, dtype=np.float64)
    if others.size == 0:
        raise ValueError("ISD undefined on empty set")
    return float(isd_matrix(np.atleast_2d(as_embedding(d)), np.atleast_2d(others), q)[0])


# Vectorized forms used by selection and memory code.

def perp_rows(X, q):
    """Orthogonal parts of each row of ``X`` with respect to ``q``."""
    u = _unit_query(q)
    X = np.asarray(X, dtype=np.float64)
    return X - np.outer(X @ u, u)


def pss_many(D, d_pos, q):
    CALLS["pss"] += 1
    u = _unit_query(q)
    a = float(np.dot(as_embedding(d_pos), u))
    b = np.asarray(D, dtype=np.float64) @ u
    return _sign(a) * (a - b)


def isd_matrix(D, R, q):
    """ISD of every row of ``D`` against the reference rows ``R``.

    Returns a vector of length ``len(D)``.
    """
    CALLS["isd"] += 1
    R = np.asarray(R, dtype=np.float64)
    if R.shape[0] == 0:
        raise ValueError("ISD undefined on empty set")
    Dp = perp_rows(D, q)
    Rp = perp_rows(R, q)
    diff = Dp[:, None, :] - Rp[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)).mean(axis=1)

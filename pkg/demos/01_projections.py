"""
Where candidates sit relative to a query
========================================

Two scores drive negative selection.  PSS asks how far a candidate trails
the labeled positive along the query direction; ISD asks how spread out a
candidate is from its peers once the query direction is projected away.
"""

import numpy as np

from l2r.geometry import isd, isd_matrix, pss, pss_many

q = np.array([1.0, 0.0])
positive = np.array([2.0, 0.5])

# A near-duplicate of the positive scores close to zero PSS: it may well be
# an unlabeled positive, so it makes a risky negative.
twin = np.array([1.9, -0.2])
far = np.array([0.2, 1.5])
print("PSS twin:", round(pss(twin, positive, q), 3))
print("PSS far: ", round(pss(far, positive, q), 3))

# ISD ignores the query axis entirely.  Sliding a point along q leaves it
# unchanged; moving it sideways does not.
crowd = np.array([[0.0, 1.0], [0.5, 1.1], [3.0, 0.9]])
print("ISD of (9, 1) vs crowd: ", round(isd([9.0, 1.0], crowd, q), 3))
print("ISD of (0, -3) vs crowd:", round(isd([0.0, -3.0], crowd, q), 3))

# The vectorized forms score a whole pool at once.
rng = np.random.default_rng(0)
pool = rng.normal(size=(6, 2))
print("pool PSS:", np.round(pss_many(pool, positive, q), 2))
print("pool ISD:", np.round(isd_matrix(pool, pool, q), 2))

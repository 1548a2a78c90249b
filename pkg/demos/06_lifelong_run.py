"""
A small lifelong run
====================

Generate a drifting stream, train the initial model once, then let several
update strategies loose on the same upcoming sessions.  The performance
grid p[i][j] is the score on session j's queries after learning session i.

This uses the default stream (about 5k documents per upcoming session) and
takes roughly a minute.  Single seeds are noisy; the acceptance suite
averages three.
"""

import numpy as np

from l2r.benchmark import GeneratorConfig, generate_synthetic_stream
from l2r.runner import RunConfig, FeatureCache, run_stream, train_initial_session

stream = generate_synthetic_stream(GeneratorConfig(), seed=2)
print("documents per session:", stream.session_sizes())

base = RunConfig(seed=2)
feats = FeatureCache(stream, base.F)
initial = train_initial_session(stream, base, feats)

for method, extra in [("initial", {}), ("l2r_vanilla", {}), ("l2r_emb", {}), ("l2r_rank", {}),
                      ("er", {"compat": True})]:
    cfg = RunConfig.from_dict({**base.to_dict(), "method": method, **extra})
    result = run_stream(stream, cfg, initial_state=initial, feats=feats)
    s = result["summaries"]["S@5"]
    print(f"{method:12s} AP {s['AP']:.3f}  Forget_T {s['Forget_t']:+.3f}  FWT {s['FWT']:.3f}  "
          f"embed ops {result['cost_report']['embed_ops']:,}")
    if method == "l2r_rank":
        grid = result["matrices"]["S@5"].values
        print(np.array2string(grid, precision=3))

"""
What backward compatibility saves
=================================

Rebuilding the index re-encodes the whole collection after every update;
a backward-compatible encoder only encodes what just arrived.  The session
sizes below are those of the LL-LoTTE and LL-MultiCPR streams.
"""

from l2r.index_store import projected_costs

streams = {
    "LL-LoTTE": [2_816_720, 654_266, 670_026, 1_405_225],
    "LL-MultiCPR": [1_486_184, 630_545, 648_307, 198_310],
}
for name, sizes in streams.items():
    compat = projected_costs(sizes, "compat").report()
    rebuild = projected_costs(sizes, "rebuild").report()
    c, r = compat["embed_ops_upcoming"], rebuild["embed_ops_upcoming"]
    print(f"{name:12s} compat {c:>11,}  rebuild {r:>11,}  saved {100 * (1 - c / r):.1f}%")
    for row in rebuild["per_session"][1:]:
        print(f"{'':12s} session {row['session']}: rebuild encodes {row['embed_ops']:,}")

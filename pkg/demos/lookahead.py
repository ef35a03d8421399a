"""Selling one item to two correlated buyers.

The lookahead auction offers the top bidder the best price given what the
other bid reveals, never below the second bid.  It is compared with a
plain second-price auction and with the best truthful mechanism found by
linear programming.

Run:  python3 demos/lookahead.py
"""

import numpy as np

from smoothauction.distributions import JointDiscreteDistribution, spawn_streams
from smoothauction.mechanisms import Lookahead, dsic_optimal_lp, ronen_lookahead, second_price_bundle

pair = JointDiscreteDistribution(np.array([[[a], [b]] for a in (1.0, 2.0) for b in (1.0, 2.0)]),
                                 np.full(4, 0.25))
auction = Lookahead(pair)
print("i.i.d. values in {1, 2}:")
for bids in ([1.0, 1.0], [2.0, 1.0], [2.0, 2.0]):
    print(f"  bids {bids} -> winner, payment {auction.outcome(np.array(bids))}")
print(f"  second price {second_price_bundle(pair).revenue:.3f}  lookahead {ronen_lookahead(pair).revenue:.3f}"
      f"  optimal {dsic_optimal_lp(pair).revenue:.3f}")

print("\ncorrelated instances: lookahead / optimal")
ratios = []
for rng in spawn_streams(3, 10):
    grids = [np.sort(rng.choice(np.arange(1, 11), 3, replace=False)).astype(float) for _ in range(2)]
    profiles = np.array([[[a], [b]] for a in grids[0] for b in grids[1]])
    joint = JointDiscreteDistribution(profiles, rng.dirichlet(np.full(9, 0.5)))
    ratios.append(ronen_lookahead(joint).revenue / dsic_optimal_lp(joint).revenue)
print("  " + "  ".join(f"{r:.3f}" for r in ratios))
print(f"  worst {min(ratios):.3f} (never below 1/2)")

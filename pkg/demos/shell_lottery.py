"""Lottery menus whose revenue keeps growing under rectangle smoothing.

Points sit on shells of slowly increasing radius, with angles that shrink
geometrically inside each shell.  Each point becomes a lottery in a menu,
priced so that every perturbed copy of its type still prefers it.  The
gap sums (the menu revenue) keep climbing while the best bundle price
stays put.

Run:  python3 demos/shell_lottery.py
"""

import numpy as np

from smoothauction.constructions import (
    gap_sequence,
    lottery_distribution,
    partial_sums_by_shell,
    shell_points,
    tailored_menu,
)
from smoothauction.distributions import SmoothedDistribution
from smoothauction.mechanisms import brev_smoothed, menu_ic_verify, menu_revenue_discrete
from smoothauction.perturbation import rectangle

delta = 0.1
model = rectangle(delta)
seq = shell_points(delta, 400)
gaps = gap_sequence(seq, model)
print(f"{len(seq)} points on {seq.shell_of[-1] - 1} shells, delta={delta}")

# a few points from the second shell
for x, theta in zip(seq.points[:3], seq.angles[:3]):
    print(f"  point {np.round(x, 4)}  angle {theta:.4f}")

shells, sums = partial_sums_by_shell(seq, gaps)
print("\n shells   points   revenue   smoothed BRev   IC")
for n in (10, 25, 50, 100, 200, 400):
    count = int(np.searchsorted(seq.shell_of, n, side="right"))
    menu = tailored_menu(seq, gaps, truncate=count)
    dist = lottery_distribution(seq, gaps, truncate=count)
    rev = menu_revenue_discrete(menu, dist).revenue
    brev = brev_smoothed(SmoothedDistribution(dist, model)).revenue
    cert = menu_ic_verify(menu, seq, gaps, model, truncate=count)
    print(f"{n:7d} {count:8d} {rev:9.5f} {brev:15.5f}   {'ok' if cert.passed else 'BROKEN'}")

# prices leave the floating-point range long before the revenue gets large
menu = tailored_menu(seq, gaps)
print(f"\nlargest price ~ 10^{menu.ln_prices.max() / np.log(10):.0f}, "
      f"smallest atom probability ~ 10^{lottery_distribution(seq, gaps).ln_probs.min() / np.log(10):.0f}")

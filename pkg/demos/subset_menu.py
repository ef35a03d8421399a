"""Many items: each type wants its own half of the items.

Type j values the items of one half-size subset at 2 m^(2j) and is rare in
proportion.  A menu that sells each subset at m^(2j) extracts revenue
j_max / C, while a single bundle price earns far less.

Run:  python3 demos/subset_menu.py
"""

import math

from smoothauction.constructions import subset_construction, subset_normalizer
from smoothauction.distributions import SmoothedDistribution
from smoothauction.mechanisms import brev_smoothed, menu_ic_certificate, menu_revenue_discrete
from smoothauction.perturbation import square

delta = 0.05
print(" m  jmax   menu rev     BRev   4(1+2d)/C   IC margin")
for m, j_max in ((4, 6), (6, 20), (8, 40), (10, 60)):
    dist, menu = subset_construction(m, j_max)
    model = square(delta)
    c = math.exp(subset_normalizer(m, j_max).ln_value)
    rev = menu_revenue_discrete(menu, dist).revenue
    brev = brev_smoothed(SmoothedDistribution(dist, model)).revenue
    cert = menu_ic_certificate(menu, dist, model)
    print(f"{m:2d} {j_max:5d} {rev:10.1f} {brev:8.1f} {4 * (1 + 2 * delta) / c:11.1f} {cert.worst:11.4f}")

# BRev overtakes 4(1+2d)/C from m=6 on: pricing the bundle at the
# cheapest type's full bundle value already earns about (m/2) times more

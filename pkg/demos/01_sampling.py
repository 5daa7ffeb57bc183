"""
Placing proxies on a grid
=========================

Four ways to lay out proxies over a point cloud, and why only the
bisection sampler copes with flat scenes.
"""

import numpy as np

from proxyattn import Config, FixNumber, FixSize, Fps, SpatialWise, sample_proxies
from proxyattn.sampling import ProxyBudgetError, spacing_anisotropy
from proxyattn.scenes import cube, slab

cfg = Config()
room = cube(2000, seed=0, size=4.0)

# The bisection sampler looks for one spacing shared by all three axes,
# so cells stay cubes while the count lands inside cfg.proxy_count_range.
wise = sample_proxies(room, SpatialWise(), cfg)
print("cube, spatial-wise:", wise.grid.shape, "cells =", wise.grid.cell_count,
      "spacing =", wise.grid.spacing[0])

# A fixed count per axis always gives (a+1)(b+1)(c+1) vertices.
fixed = sample_proxies(room, FixNumber((4, 4, 4)), cfg)
print("cube, fix-num 4^3:", fixed.m, "proxies")

# Farthest-point sampling picks proxies among the points themselves.
far = sample_proxies(room, Fps(64), cfg)
print("cube, fps:", far.m, "proxies, none on a grid:", far.grid is None)

# A 100:1 slab. Fixed counts stretch the cells ...
road = slab(2000, seed=0, aspect=100.0)
outdoor = Config.outdoor(assoc_dim=3)
stretched = sample_proxies(road, FixNumber((7, 7, 7)), outdoor)
print("slab, fix-num 7^3 anisotropy:", round(spacing_anisotropy(stretched.grid), 2))

# ... a spacing tuned for the unit cube explodes ...
try:
    sample_proxies(road, FixSize(0.2), outdoor)
except ProxyBudgetError as exc:
    print("slab, fix-size 0.2:", exc)

# ... and bisection stays in range with cubic cells.
flat = sample_proxies(road, SpatialWise(), outdoor)
print("slab, spatial-wise:", flat.grid.shape, "cells =", flat.grid.cell_count,
      "anisotropy =", spacing_anisotropy(flat.grid))
print("occupied proxies: %.1f%%" % (100 * np.mean(flat.occupied)))

"""
Look-alike species
==================

The default synthetic set has twelve classes. Four pairs share a visual
prototype exactly and differ only in range or season.
"""
import numpy as np

from crossmeta import default_specs, generate
from crossmeta.data import great_circle_deg, sister_pairs

specs = default_specs()
train, test = generate(specs, n_per_class=160, seed=0)
print(len(train), "train /", len(test), "test samples")

for a, b in sister_pairs(specs):
    sa, sb = specs[a], specs[b]
    dist = great_circle_deg(*sa.range_center, *sb.range_center)
    print(f"classes {a} and {b}: centers {dist:.0f} deg apart, seasons on day "
          f"{sa.season_center:.0f} and {sb.season_center:.0f}")

# features alone cannot tell sisters apart
a, b = sister_pairs(specs)[0]
xa = test.features[test.labels == a].mean(axis=0)
xb = test.features[test.labels == b].mean(axis=0)
print("distance between sister class means:", round(float(np.linalg.norm(xa - xb)), 3))

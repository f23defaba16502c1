"""
Where does the model expect a species?
======================================

Hold one image fixed, sweep the location over a world grid and read off
the probability of a class. Also dump the location embedding of every cell.
"""
import numpy as np

from crossmeta import EncoderConfig, TrainConfig, default_specs, generate
from crossmeta.evaluation import GridSpec, class_heatmap, export_location_embeddings, range_mask
from crossmeta.training import finetune, pretrain

specs = default_specs()
train, test = generate(specs, 160, seed=0)
enc = EncoderConfig()
cfg = TrainConfig(epochs=20, finetune_epochs=10, freeze_encoders=False)
params, _ = finetune(train, pretrain(train, cfg, enc)[0], cfg, enc)

spec = specs[0]
image = test.features[test.labels == 0].mean(axis=0)
grid = GridSpec(60, 120)
hm = class_heatmap(params, enc, 0, image, int(spec.season_center), grid)
inside = range_mask(grid, spec.range_center, spec.range_radius)
print("mean probability inside the range %.3f, outside %.3f" % (hm.probs[inside].mean(), hm.probs[~inside].mean()))

# coarse text rendering, north at the top
rows = hm.probs[::-6, ::6]
for row in rows:
    print("".join(" .:-=+*#%@"[min(9, int(v * 10))] for v in row))

table = export_location_embeddings(params, enc, GridSpec(30, 60), date=170)
print("embedding table:", table.shape)

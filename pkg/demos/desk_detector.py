"""
Training a small detector end to end
====================================

Generate cover/stego pairs, fit the three-stage detector, and measure the
detection error on held-out pairs.  With the defaults below this takes a
minute or two on one core; raise N for a steadier estimate.
"""

# %%
import logging
import time

import numpy as np

from greensteg import pipeline
from greensteg.budget import ModelShape, audit
from greensteg.model import RunConfig

logging.basicConfig(level=logging.INFO, format="%(message)s")
N, SIZE, PAYLOAD = 160, 64, 0.4

# %%
# Covers and their HILL stegos.  The split mirrors the 40/10/50 default.
covers = pipeline.synthetic_covers(N, SIZE, seed=1)
pairs = pipeline.embed_pairs(covers, "hill", PAYLOAD, seed=1)
order = np.random.default_rng(0).permutation(N)
n_tr, n_va = int(0.4 * N), int(0.1 * N)
train = [pairs[i] for i in order[:n_tr]]
val = [pairs[i] for i in order[n_tr:n_tr + n_va]]
test = [pairs[i] for i in order[n_tr + n_va:]]
print(f"train={len(train)} val={len(val)} test={len(test)}")

# %%
# Fit.  Module 1 scores every pixel, Module 2 finds anomaly spots, Module 3
# votes on the top-M spot scores.
cfg = RunConfig()
art = pipeline.FitArtifacts()
t0 = time.perf_counter()
model = pipeline.fit(train, val, cfg, art)
print(f"fit took {time.perf_counter() - t0:.1f}s; M values {model.fusion.m_values}")
print("M grid accuracy:", {m: round(float(a), 3) for m, a in zip(art.grid.grid, art.grid.accuracy)})

# %%
# Held-out detection error.  0.5 is chance.
report = pipeline.evaluate_pairs(model, test)
print(report.text())

# %%
# A single image: the anomaly map, the spots, and the five soft scores.
det = pipeline.detect(model, test[0].stego)
print("label", "stego" if det.label else "cover", "scores", np.round(det.scores, 3))
print("spots", len(det.spots.spots), "score map", det.score_map.scores.shape)

# %%
# What the fitted model actually costs, counted exactly.
print(audit(ModelShape.from_model(model), "exact").markdown())

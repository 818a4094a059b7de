"""
Embedding costs and simulated changes
=====================================

A synthetic cover, its HILL and S-UNIWARD cost maps, and where the
simulated +-1 changes land at two payloads.  Heatmaps are written as PGM
files to the directory given on the command line (default: a temp dir).
"""

# %%
import sys
import tempfile
from pathlib import Path

import numpy as np

from greensteg import pipeline, write_pgm
from greensteg.anomaly import score_heatmap
from greensteg.stego_sim import compute_costs, simulate_embedding, ternary_entropy

out = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="greensteg_"))
out.mkdir(parents=True, exist_ok=True)

# %%
# One 128x128 cover: a smoothed random field with a few noisy 8x8 tiles.
cover = pipeline.synthetic_covers(1, 128, seed=0)[0]
write_pgm(cover, out / "cover.pgm")
print("cover", cover.width, "x", cover.height, "mean", cover.pixels.mean().round(1))

# %%
# Costs are low in texture and high in smooth areas.  Show them on a log
# scale so both ends are visible.
for scheme in ("hill", "suniward"):
    rho = compute_costs(cover, scheme)
    log_rho = np.log10(rho.costs[~rho.wet])
    print(f"{scheme:9s} log10 cost: p10={np.percentile(log_rho, 10):.2f}  "
          f"median={np.median(log_rho):.2f}  p90={np.percentile(log_rho, 90):.2f}  wet={rho.wet.sum()}")
    shown = np.log10(rho.costs)
    shown = (shown - shown.min()) / (np.ptp(shown) + 1e-12)
    write_pgm(score_heatmap(1.0 - shown), out / f"cost_{scheme}.pgm")

# %%
# The payload-limited sender: lambda is chosen so that the ternary entropy
# of the change probabilities equals the message length.
rho = compute_costs(cover, "hill")
for payload in (0.2, 0.4):
    res = simulate_embedding(cover, rho, payload, seed=1, keep_probabilities=True)
    p = res.probabilities
    bits = ternary_entropy(p).sum() / p.size
    rate = np.mean(res.change_map != 0)
    print(f"payload={payload}  lambda={res.lam:.4f}  entropy/pixel={bits:.6f}  "
          f"expected rate={2 * p.mean():.4f}  realized rate={rate:.4f}")
    write_pgm(score_heatmap((res.change_map != 0).astype(float)), out / f"changes_{payload}.pgm")

# %%
# Changes should sit where costs are small.  Compare the mean cost at
# changed and unchanged pixels.
changed = res.change_map != 0
print("mean log10 cost  changed:", np.log10(rho.costs[changed]).mean().round(2),
      " unchanged:", np.log10(rho.costs[~changed & ~rho.wet]).mean().round(2))
print("images written to", out)

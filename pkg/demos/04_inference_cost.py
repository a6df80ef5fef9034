"""
Encoder passes and query time against a pairwise cross-attention baseline
=======================================================================

The attention-free pipeline encodes each text and each image once. The
reference has to push every (text, image) pair through an attention
block. Gallery encoding is timed separately, since a deployed gallery
pays for it once.
"""

from lgur.bench import ratio_is_increasing, run_bench
from lgur.config import RunConfig
from lgur.data import generate_dataset
from lgur.model import LGUR

cfg = RunConfig().replace(d=96, n_heads=4, s=64, d_prime=96)
ds = generate_dataset(cfg.data)
model = LGUR(cfg)

rows = run_bench(model, ds, [20], [25, 50, 100, 200], repeats=2)
print(f"{'M':>3} {'N':>4} {'passes':>8} {'pair passes':>12} {'online ratio':>13} {'end-to-end':>11}")
for r in rows:
    print(f"{r.M:>3} {r.N:>4} {r.lgur_passes:>8} {r.reference_passes:>12} "
          f"{r.time_ratio:>12.1f}x {r.end_to_end_ratio:>10.1f}x")
print("online ratio grows with N:", ratio_is_increasing(rows, 20))

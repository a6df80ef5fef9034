"""
Train a small model and query the gallery
=========================================

A scaled-down configuration so this finishes in well under a minute on one
core. The command line (``lgur train``) runs the full default setup.
"""

import numpy as np

from lgur.config import RunConfig
from lgur.data import generate_dataset
from lgur.retrieval import build_index, evaluate, query_text
from lgur.train import train

cfg = RunConfig().replace(**{
    "d": 48, "n_heads": 4, "s": 32, "K": 3, "d_prime": 48, "vis_blocks": 1,
    "epochs": 16, "eval_every": 4,
})
ds = generate_dataset(cfg.data)
train_set, test_set = ds.split()


def show(record):
    if "eval" in record:
        print("epoch", record["eval"]["epoch"], "held-out Rank-1", record["eval"]["rank1"])


result = train(cfg, ds, on_record=show)
print("loss terms in the last step:", sorted(k for k in result.history[-1] if k.startswith(("id_", "rk_"))))

model = result.model
print("best checkpoint:", result.best_metrics)
print("re-evaluated:", evaluate(model, test_set))

# gallery features are extracted once; each query is a text pass plus a cosine
index = build_index(model, test_set.patches, test_set.identities, test_set.pair_ids)
order = query_text(model, test_set.tokens[0], test_set.lengths[0], index)
# ranked results are image ids, which index the full dataset
print("query identity", test_set.identities[0], "-> top-5 identities", ds.identities[order[:5]].tolist())

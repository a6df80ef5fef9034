"""
Tensors, gradients and one attention block
==========================================

The library carries its own reverse-mode autodiff on top of numpy.
Everything below runs in float64 so finite differences are meaningful.
"""

import numpy as np

from lgur import tensor as tn
from lgur.attention import MhaBlockParams, mha_block, multi_head_attention
from lgur.tensor import Parameter, check_gradients

rng = np.random.default_rng(0)

# a parameter is a tensor that collects gradients
w = Parameter(rng.normal(size=(3, 2)), name="w")
x = rng.normal(size=(4, 3))
loss = tn.tanh(x @ w).sum()
loss.backward()
print("loss", float(loss.data))
print("dloss/dw\n", w.grad)

# backprop against central differences, entry by entry
print("max relative error", check_gradients(lambda: tn.tanh(x @ w).sum(), [w]))

# one multi-head attention block: 3 queries attend over 5 keys
block = MhaBlockParams(rng, "demo.mha", d=8, n_heads=2, dtype=np.float64)
q, kv = rng.normal(size=(3, 8)), rng.normal(size=(5, 8))
out, weights = multi_head_attention(q, kv, kv, block, return_weights=True)
print("attention output", out.shape, "weights per head", weights.shape)
print("each weight row sums to one:", np.allclose(weights.data.sum(-1), 1))

# padded keys get exactly zero weight
mask = np.array([[True, True, True, False, False]])
_, weights = multi_head_attention(q, kv, kv, block, key_mask=mask, return_weights=True)
print("weight on padded keys", weights.data[..., 3:].max())

# the full pre-norm block adds the residual and feed-forward paths
print("block output", mha_block(q, kv, kv, block).shape)

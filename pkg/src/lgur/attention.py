"""Transformer block used for dictionary reconstruction and prototype queries.

``mha_block`` wiring (pre-norm)::

    h   = q + MultiHead(LN1(q), LN1(k), LN1(v))
    out = h + FFN(LN2(h)),   FFN(x) = GELU(x W1 + b1) W2 + b2

Inputs may carry any number of leading batch axes; keys/values without a
batch axis (e.g. a dictionary or a prototype bank) broadcast against
batched queries.
"""
from __future__ import annotations

import math

import numpy as np

from . import tensor as tn
from .module import Module, const_param, uniform_param
from .tensor import ShapeError, Tensor


class MhaBlockParams(Module):
    def __init__(self, rng, name: str, d: int, n_heads: int, d_ff: int | None = None, dtype=np.float32):
        if d % n_heads:
            raise ValueError(f"d={d} is not divisible by n_heads={n_heads}")
        d_ff = d_ff or 4 * d
        self.name = name
        self.d = d
        self.n_heads = n_heads
        self.d_head = d // n_heads
        self.d_ff = d_ff
        u = lambda suffix, shape, fan_in: uniform_param(rng, f"{name}.{suffix}", shape, fan_in, dtype)
        self.ln1_gain = const_param(f"{name}.ln1.gain", (d,), 1.0, dtype)
        self.ln1_bias = const_param(f"{name}.ln1.bias", (d,), 0.0, dtype)
        self.wq, self.bq = u("wq", (d, d), d), u("bq", (d,), d)
        self.wk, self.bk = u("wk", (d, d), d), u("bk", (d,), d)
        self.wv, self.bv = u("wv", (d, d), d), u("bv", (d,), d)
        self.wo, self.bo = u("wo", (d, d), d), u("bo", (d,), d)
        self.ln2_gain = const_param(f"{name}.ln2.gain", (d,), 1.0, dtype)
        self.ln2_bias = const_param(f"{name}.ln2.bias", (d,), 0.0, dtype)
        self.w1, self.b1 = u("ffn.w1", (d, d_ff), d), u("ffn.b1", (d_ff,), d)
        self.w2, self.b2 = u("ffn.w2", (d_ff, d), d_ff), u("ffn.b2", (d,), d_ff)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    # (..., n, d) -> (..., h, n, d_head)
    *lead, n, d = x.shape
    return x.reshape(*lead, n, n_heads, d // n_heads).swapaxes(-2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, n, h * dh)


def key_padding_bias(key_mask, dtype=np.float32) -> np.ndarray:
    """Additive logit bias: 0 for valid keys, -inf for padding.

    ``key_mask`` is boolean (..., n_k), True where the key is real. Returned
    shape is (..., 1, 1, n_k) so it broadcasts over heads and queries.
    """
    key_mask = np.asarray(key_mask, dtype=bool)
    if not key_mask.any(axis=-1).all():
        raise ValueError("every key set needs at least one unmasked position")
    bias = np.where(key_mask, 0.0, -np.inf).astype(dtype)
    return bias[..., None, None, :]


def multi_head_attention(q, k, v, params: MhaBlockParams, key_mask=None, return_weights=False):
    """Scaled dot-product attention per head, heads concatenated, then W_o.

    q: (..., n_q, d); k, v: (..., n_k, d). Returns (..., n_q, d), plus the
    attention weights (..., h, n_q, n_k) when ``return_weights``.
    """
    q, k, v = tn.as_tensor(q), tn.as_tensor(k), tn.as_tensor(v)
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key rows {k.shape} and value rows {v.shape} differ")
    for name, t in (("query", q), ("key", k), ("value", v)):
        if t.shape[-1] != params.d:
            raise ShapeError(f"{name} width {t.shape} does not match block width d={params.d}")
    h = params.n_heads
    qh = _split_heads(q @ params.wq + params.bq, h)
    kh = _split_heads(k @ params.wk + params.bk, h)
    vh = _split_heads(v @ params.wv + params.bv, h)

    logits = (qh @ kh.swapaxes(-1, -2)) * (1.0 / math.sqrt(params.d_head))
    if key_mask is not None:
        logits = logits + key_padding_bias(key_mask, logits.dtype)
    weights = tn.softmax(logits, axis=-1)
    out = _merge_heads(weights @ vh) @ params.wo + params.bo
    if return_weights:
        return out, weights
    return out


def feed_forward(x, params: MhaBlockParams) -> Tensor:
    return tn.gelu(x @ params.w1 + params.b1) @ params.w2 + params.b2


def mha_block(q, k, v, params: MhaBlockParams, key_mask=None) -> Tensor:
    """Full pre-norm attention + FFN block with residual connections."""
    q = tn.as_tensor(q)
    k = tn.as_tensor(k)
    v = tn.as_tensor(v)
    qn = tn.layer_norm(q, params.ln1_gain, params.ln1_bias)
    if k is q:
        kn = qn
    else:
        kn = tn.layer_norm(k, params.ln1_gain, params.ln1_bias)
    vn = kn if v is k else tn.layer_norm(v, params.ln1_gain, params.ln1_bias)
    hidden = q + multi_head_attention(qn, kn, vn, params, key_mask=key_mask)
    return hidden + feed_forward(tn.layer_norm(hidden, params.ln2_gain, params.ln2_bias), params)

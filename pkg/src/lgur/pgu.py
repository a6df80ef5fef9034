"""Prototype-based granularity unification.

K learnable prototypes query any feature map through one shared block
(MHA2); prototype k's output goes through its own bias-free projection
W_k (d' x d). The K rows form the unified K x d' representation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .attention import MhaBlockParams, mha_block
from .module import Module, uniform_param
from .tensor import ShapeError, Tensor


class PrototypeBank(Module):
    def __init__(self, rng, d, K, d_out, n_heads, d_ff=None, dtype=np.float32, name="pgu"):
        self.K = K
        self.d_out = d_out
        self.P = uniform_param(rng, f"{name}.P", (K, d), d, dtype)
        self.W = [uniform_param(rng, f"{name}.W.{k}", (d_out, d), d, dtype) for k in range(K)]
        self.mha2 = MhaBlockParams(rng, f"{name}.mha2", d, n_heads, d_ff, dtype)


def pgu_extract(bank: PrototypeBank, F, key_mask=None) -> Tensor:
    """(..., n, d) feature -> (..., K, d') unified feature."""
    F = tn.as_tensor(F)
    if F.shape[-1] != bank.P.shape[-1]:
        raise ShapeError(f"feature width {F.shape} does not match prototypes {bank.P.shape}")
    attended = mha_block(bank.P, F, F, bank.mha2, key_mask=key_mask)  # (..., K, d)
    W = tn.stack(bank.W, axis=0).swapaxes(-1, -2)  # (K, d, d')
    rows = tn.reshape(attended, attended.shape[:-1] + (1, attended.shape[-1]))  # (..., K, 1, d)
    out = rows @ W  # (..., K, 1, d')
    return tn.reshape(out, attended.shape[:-1] + (bank.d_out,))


@dataclass
class UnifiedFeatures:
    T: Tensor | None
    T_re: Tensor
    V_re: Tensor
    V_g: Tensor | None


def unify_all(bank: PrototypeBank, T, T_re, V_re, V_g, text_mask=None, visual_bank=None) -> UnifiedFeatures:
    """Run all four features through the same bank.

    ``visual_bank`` is only for the unshared-prototype ablation, where
    visual features use a second, disjoint bank.
    """
    vbank = visual_bank or bank
    return UnifiedFeatures(
        T=None if T is None else pgu_extract(bank, T, text_mask),
        T_re=pgu_extract(bank, T_re, text_mask),
        V_re=pgu_extract(vbank, V_re),
        V_g=None if V_g is None else pgu_extract(vbank, V_g),
    )


class GlobalPool(Module):
    """Stand-in for PGU when it is ablated: masked mean pooling followed by
    one projection, giving a 1 x d' feature."""

    K = 1

    def __init__(self, rng, d, d_out, dtype=np.float32, name="pool"):
        self.d_out = d_out
        self.W = uniform_param(rng, f"{name}.W", (d, d_out), d, dtype)

    def __call__(self, F, key_mask=None) -> Tensor:
        F = tn.as_tensor(F)
        if key_mask is None:
            pooled = F.mean(axis=-2, keepdims=True)
        else:
            m = np.asarray(key_mask, dtype=F.dtype)[..., None]
            pooled = (F * m).sum(axis=-2, keepdims=True) / m.sum(axis=-2, keepdims=True)
        return pooled @ self.W


def flatten_unified(F) -> np.ndarray:
    """Row-major flattening of (..., K, d') to (..., K*d')."""
    arr = F.data if isinstance(F, Tensor) else np.asarray(F)
    return arr.reshape(arr.shape[:-2] + (-1,))

"""Dictionary-based granularity alignment.

Both modalities are re-expressed through one bank of learnable atoms
``D`` (s x d) by a single cross-attention block (MHA1) that uses the
atoms as keys and values. Visual reconstructions are row-scaled by a
sigmoid foreground mask. During training the visual feature is also
reconstructed with its paired text as keys/values (the guidance feature).
"""
from __future__ import annotations

import numpy as np

from . import tensor as tn
from .attention import MhaBlockParams, mha_block
from .module import Module, uniform_param
from .tensor import ShapeError, Tensor


class Dictionary(Module):
    def __init__(self, rng, s: int, d: int, dtype=np.float32, name="dga.D"):
        self.D = uniform_param(rng, name, (s, d), d, dtype)

    @property
    def size(self):
        return self.D.shape[0]


class ForegroundMaskParams(Module):
    def __init__(self, rng, d: int, dtype=np.float32, name="dga.mask"):
        self.weight = uniform_param(rng, f"{name}.weight", (d, 1), d, dtype)
        self.bias = uniform_param(rng, f"{name}.bias", (1,), d, dtype)


def reconstruct_text(T, dictionary: Dictionary, mha1: MhaBlockParams) -> Tensor:
    """T_re = MHA1(T, D, D)."""
    T = tn.as_tensor(T)
    if T.shape[-1] != dictionary.D.shape[-1]:
        raise ShapeError(f"text width {T.shape} does not match dictionary {dictionary.D.shape}")
    return mha_block(T, dictionary.D, dictionary.D, mha1)


def foreground_mask(V, mask_params: ForegroundMaskParams) -> Tensor:
    """M = sigmoid(V w + b), shape (..., HW, 1)."""
    return tn.sigmoid(tn.as_tensor(V) @ mask_params.weight + mask_params.bias)


def reconstruct_visual(V, dictionary: Dictionary, M, mha1: MhaBlockParams) -> Tensor:
    """V_re = MHA1(V, D, D) with row i scaled by M_i."""
    V = tn.as_tensor(V)
    if V.shape[-1] != dictionary.D.shape[-1]:
        raise ShapeError(f"visual width {V.shape} does not match dictionary {dictionary.D.shape}")
    out = mha_block(V, dictionary.D, dictionary.D, mha1)
    return apply_mask(out, M)


def guided_visual(V, T, M, mha1: MhaBlockParams, text_mask=None) -> Tensor:
    """V_g = MHA1(V, T, T) row-scaled by M; T is the paired description."""
    V, T = tn.as_tensor(V), tn.as_tensor(T)
    if V.shape[-1] != T.shape[-1]:
        raise ShapeError(f"visual {V.shape} and text {T.shape} widths differ")
    return apply_mask(mha_block(V, T, T, mha1, key_mask=text_mask), M)


def apply_mask(x: Tensor, M) -> Tensor:
    if M is None:
        return x
    M = tn.as_tensor(M)
    if M.shape[-2] != x.shape[-2] or M.shape[-1] != 1:
        raise ShapeError(f"mask {M.shape} does not fit features {x.shape}")
    return x * M


class DGA(Module):
    """MHA1, the atom bank(s) and the mask head, configured by ablation flags.

    ``shared_dictionary=False`` gives each modality its own bank;
    ``self_attention`` replaces the bank with the feature itself.
    """

    def __init__(self, rng, d, s, n_heads, d_ff=None, *, shared_dictionary=True,
                 mask_enabled=True, self_attention=False, dtype=np.float32):
        self.mha1 = MhaBlockParams(rng, "dga.mha1", d, n_heads, d_ff, dtype)
        self.shared_dictionary = shared_dictionary
        self.mask_enabled = mask_enabled
        self.self_attention = self_attention
        if self_attention:
            self.text_dict = self.visual_dict = None
        elif shared_dictionary:
            self.text_dict = self.visual_dict = Dictionary(rng, s, d, dtype, "dga.D")
        else:
            self.text_dict = Dictionary(rng, s, d, dtype, "dga.D_text")
            self.visual_dict = Dictionary(rng, s, d, dtype, "dga.D_visual")
        self.mask = ForegroundMaskParams(rng, d, dtype) if mask_enabled else None

    def text(self, T, text_mask=None) -> Tensor:
        if self.self_attention:
            return mha_block(T, T, T, self.mha1, key_mask=text_mask)
        return reconstruct_text(T, self.text_dict, self.mha1)

    def mask_of(self, V):
        return foreground_mask(V, self.mask) if self.mask_enabled else None

    def visual(self, V, M=None) -> Tensor:
        if self.self_attention:
            return apply_mask(mha_block(V, V, V, self.mha1), M)
        return reconstruct_visual(V, self.visual_dict, M, self.mha1)

    def guided(self, V, T, M=None, text_mask=None) -> Tensor:
        return guided_visual(V, T, M, self.mha1, text_mask)

"""Toy visual and textual backbones.

The visual side embeds a grid of raw patch vectors, adds a learned
position table, runs self-attention blocks and a final 1x1 projection.
The textual side is a learned token table feeding a bidirectional LSTM
whose two hidden streams are concatenated and projected to ``d``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .attention import MhaBlockParams, mha_block
from .module import Linear, Module, const_param, uniform_param
from .tensor import Tensor

PAD_ID = 0


class InputError(ValueError):
    """Malformed model input (bad token ids, wrong patch grid)."""


@dataclass
class VisualInput:
    """H x W grid of raw patch vectors, stored row-major as (H*W, p)."""

    patches: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise InputError("grid extents must be positive")
        if self.patches.shape[0] != self.height * self.width:
            raise InputError(f"{self.patches.shape[0]} patches for a {self.height}x{self.width} grid")


@dataclass
class TextInput:
    tokens: np.ndarray

    @property
    def length(self) -> int:
        return len(self.tokens)


@dataclass
class EncodedPair:
    V: np.ndarray
    T: np.ndarray
    identity_label: int
    pair_id: int


class ImageEncoder(Module):
    def __init__(self, rng, d, patch_dim, n_patches, n_blocks=2, n_heads=6, d_ff=None,
                 dtype=np.float32, name="vis"):
        self.n_patches = n_patches
        self.embed = Linear(rng, f"{name}.embed", patch_dim, d, dtype=dtype)
        self.pos = uniform_param(rng, f"{name}.pos", (n_patches, d), d, dtype)
        self.blocks = [MhaBlockParams(rng, f"{name}.block{i}", d, n_heads, d_ff, dtype)
                       for i in range(n_blocks)]
        self.ln_f_gain = const_param(f"{name}.ln_f.gain", (d,), 1.0, dtype)
        self.ln_f_bias = const_param(f"{name}.ln_f.bias", (d,), 0.0, dtype)
        self.proj = Linear(rng, f"{name}.proj", d, d, dtype=dtype)

    def __call__(self, patches) -> Tensor:
        """patches: (..., HW, p) -> V: (..., HW, d)."""
        patches = np.asarray(patches)
        if patches.shape[-2] != self.n_patches:
            raise InputError(f"expected {self.n_patches} patches, got {patches.shape[-2]}")
        x = self.embed(tn.Tensor(patches.astype(self.pos.dtype, copy=False))) + self.pos
        for block in self.blocks:
            x = mha_block(x, x, x, block)
        return self.proj(tn.layer_norm(x, self.ln_f_gain, self.ln_f_bias))


class LSTMCell(Module):
    def __init__(self, rng, name, d_in, hidden, dtype=np.float32):
        self.hidden = hidden
        self.weight = uniform_param(rng, f"{name}.weight", (d_in + hidden, 4 * hidden), d_in + hidden, dtype)
        self.bias = uniform_param(rng, f"{name}.bias", (4 * hidden,), d_in + hidden, dtype)

    def __call__(self, x, h, c):
        z = tn.concat([x, h], axis=-1) @ self.weight + self.bias
        n = self.hidden
        i = tn.sigmoid(z[..., :n])
        f = tn.sigmoid(z[..., n:2 * n])
        g = tn.tanh(z[..., 2 * n:3 * n])
        o = tn.sigmoid(z[..., 3 * n:])
        c = f * c + i * g
        h = o * tn.tanh(c)
        return h, c


class TextEncoder(Module):
    def __init__(self, rng, d, vocab_size, embed_dim=None, hidden=None, dtype=np.float32, name="txt"):
        embed_dim = embed_dim or d
        hidden = hidden or d // 2
        self.vocab_size = vocab_size
        self.hidden = hidden
        self.embedding = uniform_param(rng, f"{name}.embedding", (vocab_size, embed_dim), embed_dim, dtype)
        self.fwd = LSTMCell(rng, f"{name}.lstm_fwd", embed_dim, hidden, dtype)
        self.bwd = LSTMCell(rng, f"{name}.lstm_bwd", embed_dim, hidden, dtype)
        self.proj = Linear(rng, f"{name}.proj", 2 * hidden, d, dtype=dtype)

    def __call__(self, tokens, lengths=None) -> Tensor:
        """tokens: (B, L_max) int ids; lengths: (B,). Returns (B, L_max, d).

        Rows at or beyond a sequence's length are padding: the backward
        stream holds a zero state across them, so rows 0..L-1 never see
        padded positions.
        """
        tokens = np.asarray(tokens)
        if tokens.ndim != 2:
            raise InputError(f"tokens must be (batch, length), got {tokens.shape}")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.vocab_size):
            raise InputError(f"token ids must lie in [0, {self.vocab_size})")
        B, L = tokens.shape
        if lengths is None:
            lengths = np.full(B, L)
        lengths = np.asarray(lengths)
        if (lengths < 1).any() or (lengths > L).any():
            raise InputError("lengths must lie in [1, L_max]")
        dtype = self.embedding.dtype
        x = self.embedding[tokens]
        zeros = tn.Tensor(np.zeros((B, self.hidden), dtype=dtype))

        h, c = zeros, zeros
        fwd_out = []
        for t in range(L):
            h, c = self.fwd(x[:, t, :], h, c)
            fwd_out.append(h)

        h, c = zeros, zeros
        bwd_out = [None] * L
        for t in range(L - 1, -1, -1):
            h, c = self.bwd(x[:, t, :], h, c)
            valid = (t < lengths)
            if not valid.all():
                m = valid.astype(dtype)[:, None]
                h, c = h * m, c * m
            bwd_out[t] = h

        seq = tn.concat([tn.stack(fwd_out, axis=1), tn.stack(bwd_out, axis=1)], axis=-1)
        return self.proj(seq)


def length_mask(lengths, max_len) -> np.ndarray:
    lengths = np.asarray(lengths)
    return np.arange(max_len)[None, :] < lengths[:, None]

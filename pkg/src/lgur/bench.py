"""Inference cost of attention-free retrieval against a pairwise
cross-attention pipeline.

The attention-free side extracts one text feature per query and one image
feature per gallery image, then ranks by cosine: M + N encoder passes.
The reference side caches backbone features but, like cross-modal
attention methods, must forward every (query, image) pair through an
attention block before it can score that pair: M * N pair passes.

Timing is split the way a deployed gallery is used. The offline phase
encodes the gallery once (index features, or cached backbone features for
the reference). The online phase is what each query batch pays: text
encoding plus scoring against all N gallery entries. ``time_ratio``
compares online phases; end-to-end times are reported alongside.
"""
from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .attention import MhaBlockParams, mha_block
from .backbones import length_mask
from .model import LGUR
from .retrieval import rank_gallery, similarity


@dataclass
class BenchRow:
    M: int
    N: int
    lgur_passes: int
    reference_passes: int
    lgur_seconds: float  # online: M queries against an indexed gallery
    reference_seconds: float
    lgur_offline_seconds: float = 0.0  # gallery encoding, paid once
    reference_offline_seconds: float = 0.0

    @property
    def time_ratio(self) -> float:
        return self.reference_seconds / self.lgur_seconds

    @property
    def end_to_end_ratio(self) -> float:
        return ((self.reference_seconds + self.reference_offline_seconds)
                / (self.lgur_seconds + self.lgur_offline_seconds))

    def as_dict(self) -> dict:
        return {"M": self.M, "N": self.N, "lgur_passes": self.lgur_passes,
                "reference_passes": self.reference_passes,
                "lgur_seconds": self.lgur_seconds, "reference_seconds": self.reference_seconds,
                "lgur_offline_seconds": self.lgur_offline_seconds,
                "reference_offline_seconds": self.reference_offline_seconds,
                "time_ratio": self.time_ratio, "end_to_end_ratio": self.end_to_end_ratio}


class CrossAttentionReference:
    """Scores each pair by cross-attending image patches to the text tokens
    with one MHA block, then comparing pooled features."""

    def __init__(self, model: LGUR, seed: int = 0):
        self.model = model
        if model.dga is not None:
            self.block = model.dga.mha1
        else:
            cfg = model.cfg
            self.block = MhaBlockParams(np.random.default_rng(seed), "ref.cross", cfg.d, cfg.n_heads,
                                        cfg.ffn_width, model.image_encoder.pos.dtype)
        self.counters = Counter()

    def encode_gallery(self, patches) -> np.ndarray:
        """Backbone features, computed once per gallery image."""
        with tn.no_grad():
            return self.model.image_encoder(patches).data

    def scores(self, tokens, lengths, gallery: np.ndarray) -> np.ndarray:
        """(M, N) pair scores; ``gallery`` comes from ``encode_gallery``."""
        with tn.no_grad():
            T = self.model.text_encoder(tokens, lengths).data  # (M, L, d)
            mask = length_mask(lengths, tokens.shape[1])
            out = np.empty((len(T), len(gallery)))
            for m in range(len(T)):
                keys = T[m:m + 1, :lengths[m]]
                fused = mha_block(gallery, keys, keys, self.block).data  # N pair passes
                self.counters["pair_passes"] += len(gallery)
                t = (T[m] * mask[m, :, None]).sum(0) / lengths[m]
                v = fused.mean(axis=1)
                out[m] = v @ t / np.maximum(np.linalg.norm(v, axis=1) * np.linalg.norm(t), 1e-12)
            return out


def lgur_gallery(model: LGUR, patches) -> np.ndarray:
    return model.image_feature(patches).reshape(len(patches), -1)


def lgur_rank(model: LGUR, tokens, lengths, gallery: np.ndarray) -> np.ndarray:
    """Attention-free ranking: M text passes and one cosine matrix against
    the N indexed gallery features."""
    q = model.text_feature(tokens, lengths).reshape(len(tokens), -1)
    sims = similarity(q, gallery, model.cfg.pgu.similarity, model.cfg.K)
    return rank_gallery(sims, np.arange(len(gallery)))


def reference_rank(ref: CrossAttentionReference, tokens, lengths, gallery: np.ndarray) -> np.ndarray:
    return rank_gallery(ref.scores(tokens, lengths, gallery), np.arange(len(gallery)))


def _timed(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def run_bench(model: LGUR, dataset, M_list, N_list, repeats: int = 3, on_row=None) -> list[BenchRow]:
    """Counts and wall times (best of ``repeats``) for every (M, N)."""
    ref = CrossAttentionReference(model)
    rows = []
    for M in M_list:
        for N in N_list:
            if M > len(dataset) or N > len(dataset):
                raise ValueError(f"dataset has {len(dataset)} pairs; need M={M} and N={N}")
            tokens, lengths = dataset.tokens[:M], dataset.lengths[:M]
            patches = dataset.patches[:N]

            model.counters.clear()
            gallery = lgur_gallery(model, patches)
            lgur_rank(model, tokens, lengths, gallery)
            lgur_passes = model.counters["text_passes"] + model.counters["image_passes"]
            ref.counters.clear()
            cached = ref.encode_gallery(patches)
            reference_rank(ref, tokens, lengths, cached)
            ref_passes = ref.counters["pair_passes"]

            lgur_off = _timed(lambda: lgur_gallery(model, patches), repeats)
            ref_off = _timed(lambda: ref.encode_gallery(patches), repeats)
            lgur_s = _timed(lambda: lgur_rank(model, tokens, lengths, gallery), repeats)
            ref_s = _timed(lambda: reference_rank(ref, tokens, lengths, cached), repeats)
            row = BenchRow(M, N, lgur_passes, ref_passes, lgur_s, ref_s, lgur_off, ref_off)
            rows.append(row)
            if on_row:
                on_row(row)
    return rows


def ratio_is_increasing(rows, M) -> bool:
    ratios = [r.time_ratio for r in sorted((r for r in rows if r.M == M), key=lambda r: r.N)]
    return all(b > a for a, b in zip(ratios, ratios[1:]))

"""The assembled retrieval model: backbones -> DGA -> PGU -> heads."""
from __future__ import annotations

from collections import Counter

import numpy as np

from . import tensor as tn
from .backbones import ImageEncoder, TextEncoder, length_mask
from .config import RunConfig
from .dga import DGA
from .module import Module
from .objectives import ClassifierHeads, LossBreakdown, total_loss
from .pgu import GlobalPool, PrototypeBank, UnifiedFeatures, pgu_extract


class LGUR(Module):
    def __init__(self, cfg: RunConfig, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        data = cfg.data
        rng = np.random.default_rng(cfg.seed)
        d, heads, ff = cfg.d, cfg.n_heads, cfg.ffn_width
        self.image_encoder = ImageEncoder(rng, d, data.patch_dim, data.n_patches, cfg.vis_blocks,
                                          heads, ff, dtype)
        self.text_encoder = TextEncoder(rng, d, data.vocab_size, dtype=dtype)
        self.dga = None
        if cfg.dga.enabled:
            self.dga = DGA(rng, d, cfg.s, heads, ff, shared_dictionary=cfg.dga.shared_dictionary,
                           mask_enabled=cfg.dga.mask_enabled,
                           self_attention=cfg.dga.self_attention_variant, dtype=dtype)
        self.text_bank = self.visual_bank = self.pool = None
        if cfg.pgu.enabled:
            if cfg.pgu.shared_prototypes:
                self.text_bank = self.visual_bank = PrototypeBank(rng, d, cfg.K, cfg.d_prime, heads, ff, dtype, "pgu")
            else:
                self.text_bank = PrototypeBank(rng, d, cfg.K, cfg.d_prime, heads, ff, dtype, "pgu.text")
                self.visual_bank = PrototypeBank(rng, d, cfg.K, cfg.d_prime, heads, ff, dtype, "pgu.visual")
            k_eff = cfg.K
        else:
            self.pool = GlobalPool(rng, d, cfg.d_prime, dtype)
            k_eff = 1
        self.heads = ClassifierHeads(rng, k_eff, cfg.d_prime, cfg.n_classes, dtype)
        self.visual_heads = None
        if not cfg.shared_heads:
            self.visual_heads = ClassifierHeads(rng, k_eff, cfg.d_prime, cfg.n_classes, dtype, "heads_visual")
        self.counters = Counter()

    @property
    def guidance(self) -> bool:
        return self.dga is not None and self.cfg.dga.guidance_enabled

    def backbone_parameters(self):
        return self.image_encoder.parameters()

    # -- encoders --------------------------------------------------------
    def encode_images(self, patches) -> tn.Tensor:
        patches = np.asarray(patches)
        self.counters["image_passes"] += patches.shape[0] if patches.ndim == 3 else 1
        return self.image_encoder(patches)

    def encode_texts(self, tokens, lengths):
        tokens = np.asarray(tokens)
        self.counters["text_passes"] += tokens.shape[0]
        return self.text_encoder(tokens, lengths), length_mask(lengths, tokens.shape[1])

    def _unify(self, F, modality, key_mask=None):
        if self.pool is not None:
            return self.pool(F, key_mask)
        bank = self.text_bank if modality == "text" else self.visual_bank
        return pgu_extract(bank, F, key_mask)

    # -- training path -----------------------------------------------------
    def forward(self, patches, tokens, lengths) -> UnifiedFeatures:
        V = self.encode_images(patches)
        T, tmask = self.encode_texts(tokens, lengths)
        if self.dga is None:
            T_re, V_re, V_g, T_keep = T, V, None, None
        else:
            M = self.dga.mask_of(V)
            T_re = self.dga.text(T, tmask)
            V_re = self.dga.visual(V, M)
            V_g, T_keep = None, None
            if self.guidance:
                V_g = self.dga.guided(V, T, M, tmask)
                T_keep = T
        return UnifiedFeatures(
            T=None if T_keep is None else self._unify(T_keep, "text", tmask),
            T_re=self._unify(T_re, "text", tmask),
            V_re=self._unify(V_re, "visual"),
            V_g=None if V_g is None else self._unify(V_g, "visual"),
        )

    def loss(self, patches, tokens, lengths, labels) -> LossBreakdown:
        feats = self.forward(patches, tokens, lengths)
        return total_loss(feats, self.heads, labels, self.cfg.alpha, self.cfg.pgu.similarity,
                          self.visual_heads)

    # -- attention-free inference ----------------------------------------
    def text_feature(self, tokens, lengths) -> np.ndarray:
        """Unified text features (B, K, d') from T_re only."""
        with tn.no_grad():
            T, tmask = self.encode_texts(tokens, lengths)
            T_re = T if self.dga is None else self.dga.text(T, tmask)
            return self._unify(T_re, "text", tmask).data

    def image_feature(self, patches) -> np.ndarray:
        """Unified visual features (B, K, d') from V_re only; never touches text."""
        with tn.no_grad():
            V = self.encode_images(patches)
            if self.dga is not None:
                V = self.dga.visual(V, self.dga.mask_of(V))
            return self._unify(V, "visual").data

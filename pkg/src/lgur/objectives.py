"""Identification loss, semi-hard ranking loss, total objective, and the
identity-balanced batch sampler."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .module import Module, uniform_param
from .tensor import Tensor


class SamplingError(RuntimeError):
    """The dataset or batch cannot supply the positives/negatives needed."""


class ClassifierHeads(Module):
    """One linear identity classifier per prototype row."""

    def __init__(self, rng, K, d_in, n_classes, dtype=np.float32, name="heads"):
        self.n_classes = n_classes
        self.weights = [uniform_param(rng, f"{name}.{k}.weight", (d_in, n_classes), d_in, dtype) for k in range(K)]
        self.biases = [uniform_param(rng, f"{name}.{k}.bias", (n_classes,), d_in, dtype) for k in range(K)]

    @property
    def K(self):
        return len(self.weights)

    def logits(self, F) -> Tensor:
        """(B, K, d') -> (B, K, C)."""
        W = tn.stack(self.weights, axis=0)  # (K, d', C)
        b = tn.stack(self.biases, axis=0)  # (K, C)
        rows = tn.reshape(F, F.shape[:-1] + (1, F.shape[-1]))  # (B, K, 1, d')
        out = rows @ W  # (B, K, 1, C)
        return tn.reshape(out, F.shape[:-1] + (self.n_classes,)) + b


def cross_entropy_from_logits(logits, labels) -> Tensor:
    """Mean over all leading positions of -log softmax(logits)[label].

    ``logits`` (B, K, C); ``labels`` (B,).
    """
    logits = tn.as_tensor(logits)
    labels = np.asarray(labels)
    C = logits.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"labels must lie in [0, {C})")
    logp = tn.log_softmax(logits, axis=-1)
    B, K = logits.shape[0], logits.shape[1]
    picked = logp[np.arange(B)[:, None], np.arange(K)[None, :], labels[:, None]]  # (B, K)
    return -picked.mean()


def id_loss(F, heads: ClassifierHeads, labels) -> Tensor:
    """(1/K) sum_k CE(softmax(head_k(F_k)), y), averaged over the batch."""
    F = tn.as_tensor(F)
    if F.ndim == 2:
        F = tn.reshape(F, (1,) + F.shape)
        labels = np.atleast_1d(labels)
    return cross_entropy_from_logits(heads.logits(F), labels)


def cosine_matrix(A, B, mode: str = "flat") -> Tensor:
    """Pairwise cosine similarity between (N, K, d') and (M, K, d') features.

    ``flat`` compares the row-major flattened vectors; ``mean_per_prototype``
    averages the K per-row cosines.
    """
    A, B = tn.as_tensor(A), tn.as_tensor(B)
    if mode == "flat":
        a = tn.l2_normalize(tn.reshape(A, (A.shape[0], -1)))
        b = tn.l2_normalize(tn.reshape(B, (B.shape[0], -1)))
        return a @ b.T
    if mode == "mean_per_prototype":
        a = tn.l2_normalize(A).swapaxes(0, 1)  # (K, N, d')
        b = tn.l2_normalize(B).swapaxes(0, 1)
        return (a @ b.swapaxes(-1, -2)).mean(axis=0)
    raise ValueError(f"unknown similarity mode {mode!r}")


def cosine_sim(a, b, mode: str = "flat") -> Tensor:
    """Cosine similarity of two unified features (K x d' or flat vectors)."""
    a, b = tn.as_tensor(a), tn.as_tensor(b)
    if not np.any(a.data) or not np.any(b.data):
        raise ValueError("cosine similarity is undefined for a zero vector")
    if a.ndim == 1:
        a = tn.reshape(a, (1, a.shape[0]))
        b = tn.reshape(b, (1, b.shape[0]))
    a = tn.reshape(a, (1,) + a.shape)
    b = tn.reshape(b, (1,) + b.shape)
    return tn.reshape(cosine_matrix(a, b, mode), ())


def select_semi_hard(pos_sims, neg_sims):
    """Pick (positive index, negative index) for one anchor.

    Positive: lowest-similarity positive. Negative: the most similar
    negative that is still below that positive; if every negative is at
    or above it, the most similar negative overall.
    """
    pos_sims = np.asarray(pos_sims)
    neg_sims = np.asarray(neg_sims)
    if pos_sims.size == 0:
        raise SamplingError("anchor has no positive in the batch")
    if neg_sims.size == 0:
        raise SamplingError("anchor has no negative in the batch")
    p = int(np.argmin(pos_sims))
    below = neg_sims < pos_sims[p]
    if below.any():
        n = int(np.flatnonzero(below)[np.argmax(neg_sims[below])])
    else:
        n = int(np.argmax(neg_sims))
    return p, n


def _select_indices(sims: np.ndarray, labels: np.ndarray):
    """Row-wise semi-hard selection over a (N, N) similarity matrix whose
    rows are anchors and columns candidates."""
    same = labels[:, None] == labels[None, :]
    pos_idx = np.empty(len(labels), dtype=np.int64)
    neg_idx = np.empty(len(labels), dtype=np.int64)
    for i in range(len(labels)):
        pos = np.flatnonzero(same[i])
        neg = np.flatnonzero(~same[i])
        p, n = select_semi_hard(sims[i, pos], sims[i, neg])
        pos_idx[i] = pos[p]
        neg_idx[i] = neg[n]
    return pos_idx, neg_idx


def ranking_from_similarity(S, labels, alpha: float) -> Tensor:
    """Bidirectional hinge loss given the (N, N) similarity matrix between
    paired batches F1 (rows) and F2 (columns)."""
    S = tn.as_tensor(S)
    labels = np.asarray(labels)
    rows = np.arange(len(labels))
    total = None
    for sim in (S, S.T):
        pos_idx, neg_idx = _select_indices(sim.data, labels)
        s_pos = sim[rows, pos_idx]
        s_neg = sim[rows, neg_idx]
        term = tn.relu(alpha - s_pos + s_neg).mean()
        total = term if total is None else total + term
    return total


def ranking_loss(F1, F2, labels, alpha: float = 0.3, mode: str = "flat") -> Tensor:
    """Semi-hard bidirectional ranking loss between paired feature batches."""
    return ranking_from_similarity(cosine_matrix(F1, F2, mode), labels, alpha)


@dataclass
class LossBreakdown:
    total: Tensor
    matching: Tensor
    guidance: Tensor | None
    terms: dict  # name -> Tensor

    def as_record(self) -> dict:
        rec = {"L": float(self.total.data), "L_M": float(self.matching.data),
               "L_G": None if self.guidance is None else float(self.guidance.data)}
        rec.update({k: float(v.data) for k, v in self.terms.items()})
        return rec


def total_loss(features, heads: ClassifierHeads, labels, alpha: float = 0.3,
               mode: str = "flat", visual_heads: ClassifierHeads | None = None) -> LossBreakdown:
    """L = L_M + L_G.

    ``features`` carries T, T_re, V_re, V_g; T and V_g are None when the
    guidance branch is disabled, which drops their ID terms, the
    (T~, V~_g) ranking term and all of L_G.
    """
    vheads = visual_heads or heads
    terms = {
        "id_T_re": id_loss(features.T_re, heads, labels),
        "id_V_re": id_loss(features.V_re, vheads, labels),
    }
    guided = features.T is not None and features.V_g is not None
    if guided:
        terms["id_T"] = id_loss(features.T, heads, labels)
        terms["id_V_g"] = id_loss(features.V_g, vheads, labels)
    terms["rk_T_re_V_re"] = ranking_loss(features.T_re, features.V_re, labels, alpha, mode)
    if guided:
        terms["rk_T_V_g"] = ranking_loss(features.T, features.V_g, labels, alpha, mode)

    matching = _sum(terms.values())
    guidance = None
    if guided:
        terms["rk_T_re_T"] = ranking_loss(features.T_re, features.T, labels, alpha, mode)
        terms["rk_V_re_V_g"] = ranking_loss(features.V_re, features.V_g, labels, alpha, mode)
        guidance = terms["rk_T_re_T"] + terms["rk_V_re_V_g"]
    total = matching if guidance is None else matching + guidance
    return LossBreakdown(total, matching, guidance, terms)


def _sum(tensors):
    tensors = list(tensors)
    out = tensors[0]
    for t in tensors[1:]:
        out = out + t
    return out


def sample_batch(identities, P_ids: int, Q: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of P_ids identities x Q samples each.

    ``identities`` is the per-sample identity label array. Every identity
    in the batch contributes exactly Q samples, so each anchor has an
    in-batch positive.
    """
    if Q < 2:
        raise SamplingError("Q must be >= 2 so every anchor has an in-batch positive")
    if P_ids < 2:
        raise SamplingError("P_ids must be >= 2 so every anchor has an in-batch negative")
    identities = np.asarray(identities)
    ids, counts = np.unique(identities, return_counts=True)
    eligible = ids[counts >= Q]
    if len(eligible) < P_ids:
        raise SamplingError(f"need {P_ids} identities with >= {Q} samples, have {len(eligible)}")
    chosen = rng.choice(eligible, size=P_ids, replace=False)
    batch = []
    for ident in chosen:
        members = np.flatnonzero(identities == ident)
        batch.extend(rng.choice(members, size=Q, replace=False))
    return np.asarray(batch, dtype=np.int64)


def max_entropy_id_loss(n_classes: int) -> float:
    return math.log(n_classes)

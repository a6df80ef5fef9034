"""Attention-free retrieval: independent text/image features, cosine
ranking and Rank-k accuracy."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

INDEX_VERSION = 1
_MAGIC = b"LGURINDX"


class EvaluationError(RuntimeError):
    pass


@dataclass
class RetrievalIndex:
    features: np.ndarray  # (N, K*d') float32
    labels: np.ndarray  # (N,)
    image_ids: np.ndarray  # (N,)
    n_prototypes: int = 1

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError("index features must be (N, K*d')")
        if len(self.labels) != len(self.features) or len(self.image_ids) != len(self.features):
            raise ValueError("features, labels and image ids disagree in length")
        if (np.asarray(self.labels) < 0).any():
            raise ValueError("labels must be nonnegative")

    def __len__(self):
        return len(self.labels)


def _batches(n, size):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def build_index(model, patches, labels, image_ids=None, batch_size: int = 64) -> RetrievalIndex:
    """One visual pass per image; the text branch is never touched."""
    patches = np.asarray(patches)
    n = len(patches)
    image_ids = np.arange(n) if image_ids is None else np.asarray(image_ids)
    feats = [model.image_feature(patches[sl]) for sl in _batches(n, batch_size)]
    feats = np.concatenate(feats, axis=0)
    K = feats.shape[1]
    return RetrievalIndex(feats.reshape(n, -1).astype(np.float32), np.asarray(labels).copy(),
                          image_ids.copy(), K)


def encode_queries(model, tokens, lengths, batch_size: int = 64) -> np.ndarray:
    tokens = np.asarray(tokens)
    out = [model.text_feature(tokens[sl], np.asarray(lengths)[sl]) for sl in _batches(len(tokens), batch_size)]
    out = np.concatenate(out, axis=0)
    return out.reshape(len(tokens), -1)


def similarity(queries: np.ndarray, gallery: np.ndarray, mode: str = "flat", n_prototypes: int = 1) -> np.ndarray:
    """(M, F) x (N, F) cosine similarities."""
    queries = np.asarray(queries, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    if mode == "flat":
        q = queries / np.maximum(np.linalg.norm(queries, axis=1, keepdims=True), 1e-12)
        g = gallery / np.maximum(np.linalg.norm(gallery, axis=1, keepdims=True), 1e-12)
        return q @ g.T
    if mode == "mean_per_prototype":
        K = n_prototypes
        q = queries.reshape(len(queries), K, -1)
        g = gallery.reshape(len(gallery), K, -1)
        q = q / np.maximum(np.linalg.norm(q, axis=2, keepdims=True), 1e-12)
        g = g / np.maximum(np.linalg.norm(g, axis=2, keepdims=True), 1e-12)
        return np.einsum("mkf,nkf->mn", q, g) / K
    raise ValueError(f"unknown similarity mode {mode!r}")


def rank_gallery(sims: np.ndarray, image_ids: np.ndarray) -> np.ndarray:
    """Gallery positions by descending similarity; ties by ascending image id."""
    sims = np.atleast_2d(sims)
    order = np.empty(sims.shape, dtype=np.int64)
    for i, row in enumerate(sims):
        order[i] = np.lexsort((image_ids, -row))
    return order


def query(query_feature, index: RetrievalIndex, mode: str = "flat") -> np.ndarray:
    """Ranked image ids for one query feature (already extracted)."""
    if len(index) == 0:
        raise EvaluationError("cannot query an empty index")
    q = np.asarray(query_feature).reshape(1, -1)
    sims = similarity(q, index.features, mode, index.n_prototypes)
    return index.image_ids[rank_gallery(sims, index.image_ids)[0]]


def query_text(model, tokens, length, index: RetrievalIndex) -> np.ndarray:
    feat = model.text_feature(np.asarray(tokens)[None, :], np.asarray([length]))
    return query(feat.reshape(-1), index, model.cfg.pgu.similarity)


def rank_k_from_similarity(sims, query_labels, gallery_labels, image_ids=None, ks=(1, 5, 10)) -> dict:
    """Fraction of queries with at least one same-identity image in the top k."""
    sims = np.atleast_2d(sims)
    query_labels = np.asarray(query_labels)
    gallery_labels = np.asarray(gallery_labels)
    missing = set(query_labels.tolist()) - set(gallery_labels.tolist())
    if missing:
        raise EvaluationError(f"query identities absent from gallery: {sorted(missing)[:5]}")
    image_ids = np.arange(sims.shape[1]) if image_ids is None else np.asarray(image_ids)
    order = rank_gallery(sims, image_ids)
    hits = gallery_labels[order] == query_labels[:, None]
    first = np.where(hits.any(1), hits.argmax(1), sims.shape[1])
    return {k: float((first < k).mean()) for k in ks}


def rank_k(query_features, query_labels, index: RetrievalIndex, ks=(1, 5, 10), mode: str = "flat") -> dict:
    sims = similarity(query_features, index.features, mode, index.n_prototypes)
    return rank_k_from_similarity(sims, query_labels, index.labels, index.image_ids, ks)


def evaluate(model, dataset, ks=(1, 5, 10)) -> dict:
    """Every description queries the gallery of all images in ``dataset``."""
    index = build_index(model, dataset.patches, dataset.identities, dataset.pair_ids)
    q = encode_queries(model, dataset.tokens, dataset.lengths)
    acc = rank_k(q, dataset.identities, index, ks, model.cfg.pgu.similarity)
    metrics = {f"rank{k}": acc[k] for k in ks}
    metrics.update(num_queries=int(len(q)), num_gallery=int(len(index)))
    return metrics


def chance_rank1(query_labels, gallery_labels, n_trials: int = 2000, seed: int = 0) -> float:
    """Monte-Carlo Rank-1 of a random gallery ordering."""
    rng = np.random.default_rng(seed)
    query_labels = np.asarray(query_labels)
    gallery_labels = np.asarray(gallery_labels)
    picks = rng.integers(0, len(gallery_labels), size=(n_trials, len(query_labels)))
    return float((gallery_labels[picks] == query_labels[None, :]).mean())


# ---------------------------------------------------------------------------
# persistence
#
# layout: magic(8) | version u32 | header_len u32 | header JSON {dims, count,
#         n_prototypes} | count records of (image_id <i8, label <i8, dims x <f4)

def _entry_dtype(dims):
    return np.dtype([("image_id", "<i8"), ("label", "<i8"), ("feature", "<f4", (dims,))])


def save_index(index: RetrievalIndex, path):
    dims = index.features.shape[1]
    rec = np.empty(len(index), dtype=_entry_dtype(dims))
    rec["image_id"], rec["label"], rec["feature"] = index.image_ids, index.labels, index.features
    header = json.dumps({"dims": dims, "count": len(index), "n_prototypes": index.n_prototypes}).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", INDEX_VERSION, len(header)))
        fh.write(header)
        fh.write(rec.tobytes())


def load_index(path) -> RetrievalIndex:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"{path}: not an index file")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != INDEX_VERSION:
            raise ValueError(f"{path}: unsupported index format version {version}")
        header = json.loads(fh.read(hlen))
        rec = np.frombuffer(fh.read(), dtype=_entry_dtype(header["dims"]), count=header["count"])
    return RetrievalIndex(rec["feature"].astype(np.float32), rec["label"].astype(np.int64),
                          rec["image_id"].astype(np.int64), header["n_prototypes"])


def metrics_line(metrics: dict) -> str:
    return json.dumps(metrics, sort_keys=True)

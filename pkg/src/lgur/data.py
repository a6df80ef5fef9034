"""Synthetic paired image/text data with a built-in granularity gap.

Each identity has A coarse attributes (slot j takes one of ``n_values``
categories). Its description is the fixed sequence of attribute words,
optionally followed by a filler word, so the text is a function of the
coarse attributes alone. Its images place one foreground patch per
attribute at random grid positions; a patch is the attribute's base
vector plus an identity-specific fine variant plus per-sample noise.
Remaining patches are identity-independent clutter.

Token layout: 0 is padding, 1..A*n_values are attribute words,
the next ``n_fillers`` ids are filler words.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

FORMAT_VERSION = 1
_MAGIC = b"LGURDATA"


class DataConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    n_ids: int = 120
    pairs_per_id: int = 6
    n_attributes: int = 6
    n_values: int = 10
    height: int = 6
    width: int = 2
    patch_dim: int = 32
    noise: float = 0.1
    fine_scale: float = 0.25
    clutter_scale: float = 1.0
    bg_fraction: float = 0.5
    n_test_ids: int = 20
    vocab_size: int = 64
    n_fillers: int = 3
    seed: int = 0

    def validate(self):
        if self.n_ids < 2:
            raise DataConfigError("n_ids must be >= 2")
        if self.pairs_per_id < 2:
            raise DataConfigError("pairs_per_id must be >= 2")
        if not 0 < self.n_test_ids < self.n_ids:
            raise DataConfigError("n_test_ids must lie in (0, n_ids)")
        if self.height < 1 or self.width < 1:
            raise DataConfigError("grid extents must be positive")
        if not 0.0 <= self.bg_fraction < 1.0:
            raise DataConfigError("bg_fraction must lie in [0, 1)")
        if self.n_foreground < self.n_attributes:
            raise DataConfigError(
                f"grid {self.height}x{self.width} with bg_fraction={self.bg_fraction} leaves "
                f"{self.n_foreground} foreground patches for {self.n_attributes} attributes")
        if 1 + self.n_attributes * self.n_values + self.n_fillers > self.vocab_size:
            raise DataConfigError("vocab_size too small for attribute and filler words")
        if self.n_values ** self.n_attributes < self.n_ids:
            raise DataConfigError("not enough attribute combinations for distinct identities")
        if self.noise < 0 or self.fine_scale < 0:
            raise DataConfigError("noise scales must be nonnegative")

    @property
    def n_patches(self):
        return self.height * self.width

    @property
    def n_background(self):
        return int(round(self.bg_fraction * self.n_patches))

    @property
    def n_foreground(self):
        return self.n_patches - self.n_background

    @property
    def max_len(self):
        return 2 * self.n_attributes


@dataclass
class IdentitySpec:
    identity: int
    attributes: np.ndarray  # (A,) coarse categories
    fine_seed: int


@dataclass
class SyntheticDataset:
    config: DataConfig
    patches: np.ndarray  # (n, HW, p) float32
    tokens: np.ndarray  # (n, L_max) int64, 0-padded
    lengths: np.ndarray  # (n,)
    identities: np.ndarray  # (n,)
    pair_ids: np.ndarray  # (n,)
    attributes: np.ndarray  # (n_ids, A)
    base_vectors: np.ndarray = field(repr=False, default=None)  # (A, n_values, p)

    def __len__(self):
        return len(self.identities)

    def subset(self, index) -> "SyntheticDataset":
        index = np.asarray(index)
        return SyntheticDataset(self.config, self.patches[index], self.tokens[index],
                                self.lengths[index], self.identities[index],
                                self.pair_ids[index], self.attributes, self.base_vectors)

    @property
    def test_identities(self) -> np.ndarray:
        return np.arange(self.config.n_ids - self.config.n_test_ids, self.config.n_ids)

    def split(self):
        """Identity-disjoint (train, test) split; test = last n_test_ids ids."""
        is_test = self.identities >= self.config.n_ids - self.config.n_test_ids
        return self.subset(np.flatnonzero(~is_test)), self.subset(np.flatnonzero(is_test))


def attribute_token(slot: int, value: int, n_values: int) -> int:
    return 1 + slot * n_values + value


def describe(attributes, cfg: DataConfig) -> list[int]:
    """Deterministic token sequence for a coarse attribute vector."""
    words = [attribute_token(j, int(v), cfg.n_values) for j, v in enumerate(attributes)]
    if cfg.n_fillers:
        first_filler = 1 + cfg.n_attributes * cfg.n_values
        # filler choice and count depend only on the attributes
        n_extra = int(sum(attributes)) % (cfg.n_attributes + 1)
        words += [first_filler + (int(attributes[i % cfg.n_attributes]) % cfg.n_fillers)
                  for i in range(n_extra)]
    return words


def _identity_specs(cfg: DataConfig, rng) -> list[IdentitySpec]:
    seen = set()
    specs = []
    while len(specs) < cfg.n_ids:
        attrs = rng.integers(0, cfg.n_values, size=cfg.n_attributes)
        key = tuple(int(a) for a in attrs)
        if key in seen:
            continue
        seen.add(key)
        specs.append(IdentitySpec(len(specs), attrs, int(rng.integers(0, 2**31 - 1))))
    return specs


def generate_dataset(cfg: DataConfig | None = None, **overrides) -> SyntheticDataset:
    cfg = cfg or DataConfig()
    if overrides:
        cfg = DataConfig(**{**asdict(cfg), **overrides})
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    A, p, HW = cfg.n_attributes, cfg.patch_dim, cfg.n_patches
    bases = rng.normal(size=(A, cfg.n_values, p))
    specs = _identity_specs(cfg, rng)

    n = cfg.n_ids * cfg.pairs_per_id
    patches = np.empty((n, HW, p), dtype=np.float32)
    tokens = np.zeros((n, cfg.max_len), dtype=np.int64)
    lengths = np.empty(n, dtype=np.int64)
    identities = np.empty(n, dtype=np.int64)
    slots = np.arange(cfg.n_foreground) % A

    for spec in specs:
        fine_rng = np.random.default_rng(spec.fine_seed)
        variant = cfg.fine_scale * fine_rng.normal(size=(A, p))
        words = describe(spec.attributes, cfg)
        for j in range(cfg.pairs_per_id):
            i = spec.identity * cfg.pairs_per_id + j
            grid = cfg.clutter_scale * rng.normal(size=(HW, p))
            positions = rng.permutation(HW)[:cfg.n_foreground]
            fg = bases[slots, spec.attributes[slots]] + variant[slots]
            grid[positions] = fg + cfg.noise * rng.normal(size=fg.shape)
            patches[i] = grid
            tokens[i, :len(words)] = words
            lengths[i] = len(words)
            identities[i] = spec.identity

    attributes = np.stack([s.attributes for s in specs])
    return SyntheticDataset(cfg, patches, tokens, lengths, identities,
                            np.arange(n, dtype=np.int64), attributes, bases.astype(np.float32))


# ---------------------------------------------------------------------------
# persistence
#
# layout: magic(8) | version u32 | header_len u32 | header JSON (utf-8)
#         | n records of the structured dtype in the header, little-endian
#         | attribute table int64 (n_ids, A) | base vectors float32 (A, V, p)

def _record_dtype(cfg: DataConfig):
    return np.dtype([("pair_id", "<i8"), ("identity", "<i8"), ("length", "<i8"),
                     ("tokens", "<i8", (cfg.max_len,)),
                     ("patches", "<f4", (cfg.n_patches, cfg.patch_dim))])


def save_dataset(ds: SyntheticDataset, path):
    cfg = ds.config
    rec = np.empty(len(ds), dtype=_record_dtype(cfg))
    rec["pair_id"], rec["identity"], rec["length"] = ds.pair_ids, ds.identities, ds.lengths
    rec["tokens"], rec["patches"] = ds.tokens, ds.patches
    header = json.dumps({"config": asdict(cfg), "count": len(ds)}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        fh.write(rec.tobytes())
        fh.write(np.ascontiguousarray(ds.attributes, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(ds.base_vectors, dtype="<f4").tobytes())


def load_dataset(path) -> SyntheticDataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    buf = io.BytesIO(blob)
    if buf.read(8) != _MAGIC:
        raise ValueError(f"{path}: not a dataset file")
    version, hlen = struct.unpack("<II", buf.read(8))
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported dataset format version {version}")
    header = json.loads(buf.read(hlen))
    cfg = DataConfig(**header["config"])
    dt = _record_dtype(cfg)
    count = header["count"]
    rec = np.frombuffer(buf.read(dt.itemsize * count), dtype=dt)
    attrs = np.frombuffer(buf.read(8 * cfg.n_ids * cfg.n_attributes), dtype="<i8")
    bases = np.frombuffer(buf.read(4 * cfg.n_attributes * cfg.n_values * cfg.patch_dim), dtype="<f4")
    return SyntheticDataset(
        cfg, rec["patches"].astype(np.float32), rec["tokens"].astype(np.int64),
        rec["length"].astype(np.int64), rec["identity"].astype(np.int64),
        rec["pair_id"].astype(np.int64),
        attrs.reshape(cfg.n_ids, cfg.n_attributes).copy(),
        bases.reshape(cfg.n_attributes, cfg.n_values, cfg.patch_dim).copy())


# ---------------------------------------------------------------------------
# solvability oracle

def decode_attributes(patches, ds: SyntheticDataset) -> np.ndarray:
    """Nearest-base decoding of one image's coarse attributes.

    The ``n_foreground`` patches closest to any base vector are taken as
    foreground; each votes for its nearest (slot, value).
    """
    cfg = ds.config
    bases = ds.base_vectors.reshape(-1, cfg.patch_dim)
    d2 = ((patches[:, None, :] - bases[None, :, :]) ** 2).sum(-1)  # (HW, A*V)
    nearest = d2.argmin(1)
    best = d2.min(1)
    fg = np.argsort(best, kind="stable")[:cfg.n_foreground]
    attrs = np.full(cfg.n_attributes, -1)
    for idx in fg:
        slot, value = divmod(int(nearest[idx]), cfg.n_values)
        attrs[slot] = value
    return attrs


def nearest_centroid_rank1(ds: SyntheticDataset) -> float:
    """Rank-1 of an oracle that decodes image attributes and matches them
    against the attributes spelled out by each query's tokens."""
    cfg = ds.config
    decoded = np.stack([decode_attributes(p, ds) for p in ds.patches])
    hits = 0
    for i in range(len(ds)):
        words = ds.tokens[i, :ds.lengths[i]]
        words = words[(words >= 1) & (words <= cfg.n_attributes * cfg.n_values)] - 1
        query = np.full(cfg.n_attributes, -1)
        query[words // cfg.n_values] = words % cfg.n_values
        score = (decoded == query[None, :]).sum(1)
        top = np.flatnonzero(score == score.max())
        # ties count as a miss unless every tied image is correct
        hits += int(np.all(ds.identities[top] == ds.identities[i]))
    return hits / len(ds)

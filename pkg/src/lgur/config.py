"""Run configuration and its dotted key = value text format.

Example file::

    # full model at desk scale
    d = 384
    alpha = 0.3
    dga.guidance_enabled = false
    data.n_ids = 120
"""
from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field, fields

from .data import DataConfig


class ConfigError(ValueError):
    """Unknown key or invalid value; the message names the key."""


@dataclass
class DGAFlags:
    enabled: bool = True
    mask_enabled: bool = True
    guidance_enabled: bool = True
    shared_dictionary: bool = True
    self_attention_variant: bool = False


@dataclass
class PGUFlags:
    enabled: bool = True
    shared_prototypes: bool = True
    similarity: str = "flat"


@dataclass
class RunConfig:
    d: int = 384
    d_prime: int = 512
    s: int = 400
    K: int = 6
    alpha: float = 0.3
    n_heads: int = 6
    d_ff: int = 0  # 0 -> 4 * d
    vis_blocks: int = 2
    P_ids: int = 16
    Q: int = 4
    epochs: int = 30
    lr_backbone: float = 1e-4
    lr_other: float = 1e-3
    eval_every: int = 5
    shared_heads: bool = True
    seed: int = 0
    dga: DGAFlags = field(default_factory=DGAFlags)
    pgu: PGUFlags = field(default_factory=PGUFlags)
    data: DataConfig = field(default_factory=DataConfig)

    @property
    def batch_size(self):
        return self.P_ids * self.Q

    @property
    def ffn_width(self):
        return self.d_ff or 4 * self.d

    @property
    def n_classes(self):
        return self.data.n_ids - self.data.n_test_ids

    def validate(self):
        if self.d % self.n_heads:
            raise ConfigError(f"d: {self.d} is not divisible by n_heads={self.n_heads}")
        if self.K < 1:
            raise ConfigError("K: must be >= 1")
        if self.alpha <= 0:
            raise ConfigError("alpha: margin must be > 0")
        if self.pgu.similarity not in ("flat", "mean_per_prototype"):
            raise ConfigError(f"pgu.similarity: unknown mode {self.pgu.similarity!r}")
        if self.dga.guidance_enabled and not self.dga.enabled:
            raise ConfigError("dga.guidance_enabled: requires dga.enabled")
        if self.Q < 2:
            raise ConfigError("Q: must be >= 2")
        for name in ("d", "d_prime", "s", "epochs", "P_ids", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be positive")
        self.data.validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        cfg = cls()
        for key, value in flatten(d).items():
            set_key(cfg, key, value)
        return cfg

    def replace(self, **dotted) -> "RunConfig":
        """Copy with dotted-key overrides, e.g. ``replace(**{"dga.enabled": False})``."""
        cfg = dataclasses.replace(self, dga=dataclasses.replace(self.dga),
                                  pgu=dataclasses.replace(self.pgu),
                                  data=dataclasses.replace(self.data))
        for key, value in dotted.items():
            set_key(cfg, key, value)
        return cfg


def flatten(d: dict, prefix="") -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(flatten(v, f"{prefix}{k}."))
        else:
            out[f"{prefix}{k}"] = v
    return out


def set_key(cfg, key: str, value):
    *path, leaf = key.split(".")
    target = cfg
    for part in path:
        if not dataclasses.is_dataclass(target) or part not in {f.name for f in fields(target)}:
            raise ConfigError(f"{key}: unknown configuration key")
        target = getattr(target, part)
    spec = {f.name: f for f in fields(target)} if dataclasses.is_dataclass(target) else {}
    if leaf not in spec or dataclasses.is_dataclass(getattr(target, leaf)):
        raise ConfigError(f"{key}: unknown configuration key")
    current = getattr(target, leaf)
    setattr(target, leaf, _coerce(key, value, type(current)))


def _coerce(key, value, kind):
    if kind is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if kind is float:
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {kind.__name__}, got {value!r}") from None
    return str(value)


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base.replace() if base else RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        set_key(cfg, key, value)
    return cfg


def dump_config_text(cfg: RunConfig) -> str:
    lines = []
    for key, value in flatten(cfg.to_dict()).items():
        if isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def ablation_presets(base: RunConfig) -> dict[str, RunConfig]:
    """Component ablations (rows 0-6), dictionary variants, prototype variant."""
    def cfg(pgu, dga, mask=False, guid=False, **extra):
        return base.replace(**{"pgu.enabled": pgu, "dga.enabled": dga,
                               "dga.mask_enabled": mask, "dga.guidance_enabled": guid,
                               "dga.shared_dictionary": True, "dga.self_attention_variant": False,
                               "pgu.shared_prototypes": True, **extra})
    return {
        "0_baseline": cfg(False, False),
        "1_pgu": cfg(True, False),
        "2_dga": cfg(False, True, True, True),
        "3_pgu_D": cfg(True, True),
        "4_pgu_D_M": cfg(True, True, True),
        "5_pgu_D_G": cfg(True, True, False, True),
        "6_lgur": cfg(True, True, True, True),
        "D_self_attention": cfg(True, True, **{"dga.self_attention_variant": True}),
        "D_unshared": cfg(True, True, **{"dga.shared_dictionary": False}),
        "P_unshared": cfg(True, True, True, True, **{"pgu.shared_prototypes": False}),
    }

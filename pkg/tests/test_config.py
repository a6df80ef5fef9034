import pytest

from lgur.config import ConfigError, RunConfig, ablation_presets, dump_config_text, parse_config_text


def test_defaults():
    cfg = RunConfig()
    assert (cfg.d, cfg.d_prime, cfg.s, cfg.K, cfg.alpha) == (384, 512, 400, 6, 0.3)
    assert cfg.batch_size == 64
    assert (cfg.lr_backbone, cfg.lr_other, cfg.epochs) == (1e-4, 1e-3, 30)
    assert cfg.ffn_width == 4 * 384
    assert cfg.n_classes == 100


def test_text_round_trip():
    cfg = RunConfig().replace(**{"d": 48, "dga.mask_enabled": False, "pgu.similarity": "mean_per_prototype"})
    assert parse_config_text(dump_config_text(cfg)) == cfg


def test_comments_and_types():
    cfg = parse_config_text("# comment\nalpha = 0.5  # margin\ndga.enabled = false\nK=3\n")
    assert cfg.alpha == 0.5 and cfg.dga.enabled is False and cfg.K == 3


@pytest.mark.parametrize("text, key", [
    ("bogus = 1", "bogus"),
    ("dga.nope = true", "dga.nope"),
    ("K = three", "K"),
    ("dga.enabled = maybe", "dga.enabled"),
    ("dga = 1", "dga"),
])
def test_errors_name_the_key(text, key):
    with pytest.raises(ConfigError, match=key):
        parse_config_text(text)


def test_missing_equals():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("d = 8\noops\n")


@pytest.mark.parametrize("over, key", [
    ({"d": 385}, "d"), ({"K": 0}, "K"), ({"alpha": 0.0}, "alpha"),
    ({"dga.enabled": False}, "dga.guidance_enabled"), ({"Q": 1}, "Q"),
])
def test_validation(over, key):
    with pytest.raises(ConfigError, match=key):
        RunConfig().replace(**over).validate()


def test_replace_does_not_alias():
    base = RunConfig()
    other = base.replace(**{"dga.enabled": False})
    assert base.dga.enabled is True and other.dga.enabled is False


def test_ablation_presets():
    presets = ablation_presets(RunConfig())
    rows = [presets[f"{i}_{n}"] for i, n in enumerate(["baseline", "pgu", "dga", "pgu_D", "pgu_D_M", "pgu_D_G", "lgur"])]
    flags = [(c.pgu.enabled, c.dga.enabled, c.dga.mask_enabled, c.dga.guidance_enabled) for c in rows]
    assert flags == [
        (False, False, False, False), (True, False, False, False), (False, True, True, True),
        (True, True, False, False), (True, True, True, False), (True, True, False, True),
        (True, True, True, True),
    ]
    assert presets["D_unshared"].dga.shared_dictionary is False
    assert presets["D_self_attention"].dga.self_attention_variant is True
    assert presets["P_unshared"].pgu.shared_prototypes is False
    for c in presets.values():
        c.validate()

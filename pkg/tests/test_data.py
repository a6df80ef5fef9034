import numpy as np
import pytest

from lgur.data import (DataConfig, DataConfigError, describe, generate_dataset, load_dataset,
                       nearest_centroid_rank1, save_dataset)


@pytest.fixture(scope="module")
def default_data():
    return generate_dataset()


def test_default_size(default_data):
    assert len(default_data) == 720
    assert default_data.patches.shape == (720, 12, 32)
    assert default_data.tokens.max() < 64


def test_same_seed_same_data():
    a = generate_dataset(n_ids=10, n_test_ids=2)
    b = generate_dataset(n_ids=10, n_test_ids=2)
    np.testing.assert_array_equal(a.patches, b.patches)
    np.testing.assert_array_equal(a.tokens, b.tokens)
    c = generate_dataset(n_ids=10, n_test_ids=2, seed=1)
    assert not np.array_equal(a.patches, c.patches)


def test_granularity_gap_on_every_identity(default_data):
    ds = default_data
    for ident in range(ds.config.n_ids):
        rows = np.flatnonzero(ds.identities == ident)
        assert len(np.unique(ds.tokens[rows], axis=0)) == 1  # one description per identity
        assert (ds.lengths[rows] == ds.lengths[rows[0]]).all()
        assert ds.patches[rows].var(axis=0).sum() > 0  # images vary
        for a, b in zip(rows[:-1], rows[1:]):
            assert not np.array_equal(ds.patches[a], ds.patches[b])


def test_identities_have_distinct_attributes(default_data):
    assert len(np.unique(default_data.attributes, axis=0)) == default_data.config.n_ids


def test_text_depends_only_on_attributes():
    cfg = DataConfig()
    attrs = np.array([1, 2, 3, 4, 5, 6])
    assert describe(attrs, cfg) == describe(attrs.copy(), cfg)
    assert describe(attrs, cfg)[:6] == [2, 13, 24, 35, 46, 57]


def test_split_is_identity_disjoint(default_data):
    train, test = default_data.split()
    assert len(train) == 600 and len(test) == 120
    assert not set(train.identities.tolist()) & set(test.identities.tolist())
    assert set(test.identities.tolist()) == set(range(100, 120))


def test_nearest_centroid_oracle_solves_task(default_data):
    assert nearest_centroid_rank1(default_data) == 1.0
    assert nearest_centroid_rank1(default_data.split()[1]) == 1.0


def test_invalid_configs():
    with pytest.raises(DataConfigError):
        generate_dataset(n_ids=1)
    with pytest.raises(DataConfigError):
        generate_dataset(pairs_per_id=1)
    with pytest.raises(DataConfigError):
        generate_dataset(bg_fraction=0.9)
    with pytest.raises(DataConfigError):
        generate_dataset(vocab_size=20)


def test_persistence_round_trip(tmp_path):
    ds = generate_dataset(n_ids=6, n_test_ids=2)
    path = tmp_path / "d.bin"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.config == ds.config
    for name in ("patches", "tokens", "lengths", "identities", "pair_ids", "attributes", "base_vectors"):
        np.testing.assert_array_equal(getattr(back, name), getattr(ds, name))


def test_persistence_rejects_unknown_version(tmp_path):
    ds = generate_dataset(n_ids=6, n_test_ids=2)
    path = tmp_path / "d.bin"
    save_dataset(ds, path)
    blob = bytearray(path.read_bytes())
    blob[8] = 99
    path.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="version"):
        load_dataset(path)

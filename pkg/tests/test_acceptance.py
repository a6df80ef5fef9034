"""Acceptance gate: one test per primary criterion, each reporting a single
PASS/FAIL line (also collected in the terminal summary).

The reproduction and ablation tests train at full default scale and take
most of the suite's wall time; both are marked ``slow``.
"""
import math
import time

import numpy as np
import pytest

from conftest import small_config, tiny_config
from lgur.attention import MhaBlockParams, mha_block, multi_head_attention
from lgur.bench import ratio_is_increasing, run_bench
from lgur.checkpoint import load_model
from lgur.cli import cmd_train
from lgur.config import RunConfig, ablation_presets
from lgur.data import generate_dataset, save_dataset
from lgur.dga import Dictionary, ForegroundMaskParams, foreground_mask, reconstruct_text, reconstruct_visual
from lgur.model import LGUR
from lgur.objectives import ClassifierHeads, id_loss, ranking_from_similarity
from lgur.retrieval import build_index, chance_rank1, evaluate, load_index, save_index
from lgur.tensor import check_gradients
from lgur.train import train, win_count
from oracles import reference_attention

# trained runs shared between the reproduction and ablation checks
_RUNS = {}


def trained(cfg: RunConfig, dataset):
    key = repr(cfg)
    if key not in _RUNS:
        start = time.perf_counter()
        result = train(cfg, dataset)
        _RUNS[key] = (result, time.perf_counter() - start)
    return _RUNS[key]


@pytest.fixture(scope="module")
def default_data():
    return generate_dataset(RunConfig().data)


def test_gradient_correctness(criterion):
    with criterion("gradient check of the full objective") as c:
        cfg = tiny_config(d=4, n_heads=2, d_ff=8, s=3, K=2, d_prime=3, **{"data.patch_dim": 3})
        train_set, _ = generate_dataset(cfg.data).split()
        ids = np.unique(train_set.identities)[:2]
        idx = np.concatenate([np.flatnonzero(train_set.identities == i)[:2] for i in ids])
        batch = (train_set.patches[idx], train_set.tokens[idx], train_set.lengths[idx], train_set.identities[idx])
        model = LGUR(cfg, np.float64)
        c.check(len(model.loss(*batch).terms) == 8, "all 8 loss terms active")
        start = time.perf_counter()
        err = check_gradients(lambda: model.loss(*batch).total, model.parameters(), h=1e-5)
        elapsed = time.perf_counter() - start
        c.check(err < 1e-4, f"max relative error {err:.2e} (< 1e-4)")
        c.check(elapsed < 60, f"{elapsed:.1f} s (< 60 s)")


def test_attention_oracle(criterion):
    with criterion("attention vs per-head loop oracle") as c:
        r = np.random.default_rng(2024)
        worst = 0.0
        for trial in range(100):
            n_heads, d_head = int(r.integers(1, 5)), int(r.integers(1, 5))
            d = n_heads * d_head
            nq, nk = int(r.integers(1, 7)), int(r.integers(1, 8))
            p = MhaBlockParams(r, "acc.mha", d, n_heads, dtype=np.float64)
            q, k, v = r.normal(size=(nq, d)), r.normal(size=(nk, d)), r.normal(size=(nk, d))
            mask = None
            if trial % 3 == 0:
                mask = r.uniform(size=nk) < 0.6
                mask[r.integers(nk)] = True
            got = multi_head_attention(q, k, v, p, key_mask=None if mask is None else mask[None, :]).data
            worst = max(worst, float(np.abs(got - reference_attention(q, k, v, p, mask)).max()))
        c.check(worst < 1e-6, f"max abs deviation {worst:.2e} over 100 shapes (< 1e-6)")


def test_closed_form_oracles(criterion):
    with criterion("closed-form oracles") as c:
        r = np.random.default_rng(7)
        gaps = []
        for C in (2, 10, 100):
            h = ClassifierHeads(r, 3, 4, C, np.float64)
            for p in h.parameters():
                p.data[...] = 0
            gaps.append(abs(float(id_loss(r.normal(size=(5, 3, 4)), h, r.integers(0, C, 5)).data) - math.log(C)))
        c.check(max(gaps) < 1e-9, f"uniform id loss - ln C: {max(gaps):.1e}")

        labels = np.array([0, 0, 1, 1])
        same = labels[:, None] == labels[None, :]
        separated = float(ranking_from_similarity(np.where(same, 0.9, 0.2), labels, 0.3).data)
        flat = float(ranking_from_similarity(np.full((4, 4), 0.5), labels, 0.3).data)
        c.check(abs(separated) < 1e-9 and abs(flat - 0.6) < 1e-9,
                f"ranking hand cases {separated:.1e} and {flat:.12f}")

        D = Dictionary(r, 5, 8, np.float64)
        mha = MhaBlockParams(r, "dga.mha1", 8, 2, dtype=np.float64)
        mp = ForegroundMaskParams(r, 8, np.float64)
        T, V = r.normal(size=(4, 8)), r.normal(size=(6, 8))
        M = foreground_mask(V, mp)
        t0, v0 = reconstruct_text(T, D, mha).data, reconstruct_visual(V, D, M, mha).data
        D.D.data[...] = D.D.data[r.permutation(5)]
        drift = max(np.abs(reconstruct_text(T, D, mha).data - t0).max(),
                    np.abs(reconstruct_visual(V, D, M, mha).data - v0).max())
        c.check(drift < 1e-6, f"atom permutation drift {drift:.1e}")

        ones = reconstruct_visual(V, D, np.ones((6, 1)), mha).data
        zeros = reconstruct_visual(V, D, np.zeros((6, 1)), mha).data
        unmasked = mha_block(V, D.D, D.D, mha).data
        c.check(np.array_equal(ones, unmasked) and not zeros.any(), "mask of ones is identity, zeros annihilate")


@pytest.mark.slow
def test_synthetic_reproduction(criterion, default_data):
    with criterion("synthetic reproduction at defaults") as c:
        cfg = RunConfig()
        result, elapsed = trained(cfg, default_data)
        best = result.best_metrics
        c.check(best["rank1"] >= 0.80, f"best held-out Rank-1 {best['rank1']:.2f} at epoch {best['epoch']} (>= 0.80)")
        c.check(best["epoch"] <= 30, f"within {cfg.epochs} epochs")
        c.check(elapsed < 900, f"{elapsed:.0f} s (< 900 s)")

        # one untrained model's Rank-1 moves in steps of 1/20, so average over inits
        _, test_set = default_data.split()
        chance = chance_rank1(test_set.identities, test_set.identities, n_trials=5000)
        untrained = np.mean([evaluate(LGUR(cfg.replace(seed=1000 + s)), test_set)["rank1"] for s in range(60)])
        c.check(abs(untrained - chance) <= 0.02,
                f"untrained Rank-1 {untrained:.3f} vs Monte-Carlo chance {chance:.3f} (within 0.02)")


@pytest.mark.slow
def test_ablation_direction(criterion, default_data):
    with criterion("ablation direction over 5 seeds") as c:
        presets = ablation_presets(RunConfig())
        rows = []
        for name in ("6_lgur", "0_baseline", "3_pgu_D", "D_unshared"):
            for seed in range(5):
                result, _ = trained(presets[name].replace(seed=seed), default_data)
                rows.append({"config": name, "seed": seed, "rank1": result.best_metrics["rank1"]})
        table = {}
        for r in rows:
            table.setdefault(r["config"], []).append(r["rank1"])
        full_wins, _ = win_count(rows, "6_lgur", "0_baseline")
        shared_wins, _ = win_count(rows, "3_pgu_D", "D_unshared")
        c.check(full_wins >= 4, f"full > baseline in {full_wins}/5 seeds, Rank-1 "
                f"{table['6_lgur']} vs {table['0_baseline']}", fatal=False)
        c.check(shared_wins >= 4, f"shared D > unshared D in {shared_wins}/5 seeds, Rank-1 "
                f"{table['3_pgu_D']} vs {table['D_unshared']}")


def test_complexity_contract(criterion, default_data):
    with criterion("inference complexity") as c:
        model = LGUR(RunConfig())
        small = run_bench(model, default_data, [1, 3, 7], [5, 17], repeats=1)
        c.check(all(r.lgur_passes == r.M + r.N and r.reference_passes == r.M * r.N for r in small),
                "passes M+N vs M*N at (M,N) in {1,3,7}x{5,17}")
        M = 50
        rows = run_bench(model, default_data, [M], [50, 100, 200, 400], repeats=3)
        c.check(all(r.lgur_passes == M + r.N and r.reference_passes == M * r.N for r in rows),
                f"passes M+N vs M*N at M={M}, N in 50..400")
        ratios = ", ".join(f"N={r.N}: {r.time_ratio:.1f}x" for r in rows)
        c.check(ratio_is_increasing(rows, M), f"online query time ratio increasing in N ({ratios})")
        # reported, not gated: gallery encoding is shared work that both sides pay once
        c.details.append("end-to-end incl. gallery encoding " +
                         ", ".join(f"{r.end_to_end_ratio:.1f}x" for r in rows))


def test_determinism(criterion, tmp_path):
    with criterion("determinism and index persistence") as c:
        cfg = small_config(epochs=3)
        data = tmp_path / "d.bin"
        save_dataset(generate_dataset(cfg.data), data)
        for name in ("a.ckpt", "b.ckpt"):
            cmd_train(cfg, data, tmp_path / name)
        same = (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        c.check(same, "two seeded training runs give byte-identical checkpoints")

        model = load_model(tmp_path / "a.ckpt")
        ds = generate_dataset(cfg.data)
        index = build_index(model, ds.patches, ds.identities, ds.pair_ids)
        save_index(index, tmp_path / "i.bin")
        back = load_index(tmp_path / "i.bin")
        save_index(back, tmp_path / "j.bin")
        exact = (back.features.tobytes() == index.features.tobytes()
                 and np.array_equal(back.labels, index.labels) and np.array_equal(back.image_ids, index.image_ids)
                 and (tmp_path / "i.bin").read_bytes() == (tmp_path / "j.bin").read_bytes())
        c.check(exact, "index save/load round-trips bit-exactly")

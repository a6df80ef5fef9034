"""Seeded training loop and the ablation harness."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig, ablation_presets
from .model import LGUR
from .objectives import sample_batch
from .retrieval import evaluate
from .tensor import AdamState, adam_step

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: LGUR
    best_state: dict
    best_metrics: dict
    history: list = field(default_factory=list)  # per-step loss records
    evals: list = field(default_factory=list)  # per-eval metric records


def _sampler_rng(seed):
    # independent of the stream that initialized the parameters
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])


def train(cfg: RunConfig, dataset, on_record=None, model: LGUR | None = None) -> TrainResult:
    """Train on the identity-disjoint train split; evaluate Rank-k on the
    held-out identities every ``cfg.eval_every`` epochs and keep the state
    with the best Rank-1. The returned model holds that best state.
    """
    cfg.validate()
    train_set, test_set = dataset.split()
    model = model or LGUR(cfg)
    rng = _sampler_rng(cfg.seed)

    backbone = {id(p) for p in model.backbone_parameters()}
    params = model.parameters()
    rates = [cfg.lr_backbone if id(p) in backbone else cfg.lr_other for p in params]
    state = AdamState(params)

    steps_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    result = TrainResult(model, model.state_dict(), {"rank1": -1.0})
    emit = on_record or (lambda rec: None)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        for _ in range(steps_per_epoch):
            idx = sample_batch(train_set.identities, cfg.P_ids, cfg.Q, rng)
            losses = model.loss(train_set.patches[idx], train_set.tokens[idx],
                                train_set.lengths[idx], train_set.identities[idx])
            record = losses.as_record()
            # report an individual term before the sums it feeds
            for name in sorted(record, key=lambda k: k in ("L", "L_M", "L_G")):
                value = record[name]
                if value is not None and not math.isfinite(value):
                    raise TrainingError(f"non-finite loss at step {step}: term {name} = {value}")
            for p in params:
                p.grad = None
            losses.total.backward()
            adam_step(params, [p.grad for p in params], state, rates)
            step += 1
            record = {"step": step, "epoch": epoch, **record}
            result.history.append(record)
            emit(record)
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            metrics = {"epoch": epoch, "step": step, **evaluate(model, test_set)}
            result.evals.append(metrics)
            emit({"eval": metrics})
            log.info("epoch %d rank1 %.3f", epoch, metrics["rank1"])
            if metrics["rank1"] > result.best_metrics["rank1"]:
                result.best_metrics = metrics
                result.best_state = model.state_dict()
    model.load_state_dict(result.best_state)
    return result


def run_ablation(base: RunConfig, dataset, seeds, names=None, on_row=None) -> list[dict]:
    """Train every named preset once per seed; one result row per (config, seed)."""
    presets = ablation_presets(base)
    names = names or list(presets)
    unknown = set(names) - set(presets)
    if unknown:
        raise KeyError(f"unknown ablation configurations: {sorted(unknown)}")
    rows = []
    for name in names:
        for seed in seeds:
            cfg = presets[name].replace(seed=seed)
            res = train(cfg, dataset)
            row = {"config": name, "seed": seed, "rank1": res.best_metrics["rank1"],
                   "rank5": res.best_metrics["rank5"], "rank10": res.best_metrics["rank10"],
                   "best_epoch": res.best_metrics["epoch"]}
            rows.append(row)
            if on_row:
                on_row(row)
    return rows


def win_count(rows, better: str, worse: str, metric: str = "rank1") -> tuple[int, int]:
    """Seeds where ``better`` strictly beats ``worse``, and seeds compared."""
    by = {}
    for r in rows:
        by.setdefault(r["seed"], {})[r["config"]] = r[metric]
    pairs = [(v[better], v[worse]) for v in by.values() if better in v and worse in v]
    return sum(a > b for a, b in pairs), len(pairs)

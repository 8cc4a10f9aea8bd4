"""Episodic meta-training with Adam and validation-based model selection."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .core import EXTRAPOLATION
from .dataset import MetaDataset, MetaTask
from .evaluator import FilterIndex, evaluate_tasks
from .model import MOST, HyperConfig, ModelParams, init_params, save_checkpoint

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    pass


class Adam:
    def __init__(self, params: ModelParams, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = {k: np.zeros_like(v.value) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.value) for k, v in params.items()}
        self.steps = 0

    def step(self, params: ModelParams) -> None:
        self.steps += 1
        c1 = 1.0 - self.beta1**self.steps
        c2 = 1.0 - self.beta2**self.steps
        updates = {}
        for k, p in params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            new = p.value - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            if not np.all(np.isfinite(new)):
                raise DivergenceError(f"optimizer step produced non-finite values in {k!r}")
            updates[k] = np.asarray(new)
        for k, new in updates.items():
            params.tensors[k].value = new


@dataclass
class TrainState:
    params: ModelParams
    optimizer: Adam
    rng: np.random.Generator
    episode: int = 0
    best_valid_mrr: float = -1.0
    best_params: ModelParams | None = None
    history: list[dict] = field(default_factory=list)


def new_state(ds: MetaDataset, config: HyperConfig) -> TrainState:
    params = init_params(config, ds.num_entities, sorted(ds.background.frequent), ds.num_relations,
                         ds.num_timestamps)
    opt = Adam(params, config.lr, (config.beta1, config.beta2), config.adam_eps)
    return TrainState(params, opt, np.random.default_rng(config.seed + 1))


def make_model(ds: MetaDataset, params: ModelParams, config: HyperConfig) -> MOST:
    return MOST(params, config, ds.background, ds.num_relations, ds.mode)


def episode_batch(task: MetaTask, mode: str, config: HyperConfig, rng: np.random.Generator):
    """Support and up to ``config.batch`` query quadruples for one episode."""
    if mode == EXTRAPOLATION or not config.resample_support:
        support, pool = task.support, task.queries
    else:
        quads = task.quads
        i = int(rng.integers(len(quads)))
        support = quads[i]
        pool = [q for q in quads if q != support]
    if len(pool) > config.batch:
        pick = np.sort(rng.choice(len(pool), size=config.batch, replace=False))
        pool = [pool[j] for j in pick]
    return support, pool


def train_episode(ds: MetaDataset, state: TrainState, config: HyperConfig, model: MOST | None = None) -> float:
    """Sample one training task, take one optimizer step, return the loss."""
    if not ds.train:
        raise ValueError("dataset has no training tasks")
    model = model or make_model(ds, state.params, config)
    task = ds.train[int(state.rng.integers(len(ds.train)))]
    support, queries = episode_batch(task, ds.mode, config, state.rng)
    for p in state.params:
        p.zero_grad()
    with ad.Tape() as tape:
        out = model.forward_task(support, queries, training=True, rng=state.rng)
        if not np.all(np.isfinite(out.scores.value)):
            raise DivergenceError(f"non-finite scores at episode {state.episode} (relation {task.relation})")
        loss = model.loss(out)
    value = loss.item()
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite loss at episode {state.episode} (relation {task.relation})")
    ad.backward(loss, tape)
    state.optimizer.step(state.params)
    tape.reset()
    state.episode += 1
    return value


@dataclass
class TrainResult:
    best: ModelParams
    last: ModelParams
    best_valid_mrr: float
    history: list[dict]


def train(ds: MetaDataset, config: HyperConfig, run_dir: str | None = None, valid_split: str = "valid") -> TrainResult:
    """Run the episode budget, validating every ``eval_interval`` episodes.

    The final episode always triggers a validation pass.  With ``run_dir``
    set, writes ``best.ckpt``, ``last.ckpt`` and ``metrics.jsonl``.
    """
    state = new_state(ds, config)
    model = make_model(ds, state.params, config)
    filters = FilterIndex.from_dataset(ds)
    eval_tasks = ds.split(valid_split)
    log_fh = None
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        log_fh = open(os.path.join(run_dir, "metrics.jsonl"), "w", encoding="utf-8")

    def validate():
        mrr = evaluate_tasks(model, eval_tasks, filters).mrr
        if mrr > state.best_valid_mrr:
            state.best_valid_mrr = mrr
            state.best_params = state.params.copy()
        return mrr

    try:
        if config.episodes == 0:
            entry = {"episode": 0, "loss": None, "valid_mrr": validate()}
            state.history.append(entry)
            if log_fh:
                log_fh.write(json.dumps(entry) + "\n")
        for _ in range(config.episodes):
            loss = train_episode(ds, state, config, model)
            entry = {"episode": state.episode, "loss": loss}
            if state.episode % config.eval_interval == 0 or state.episode == config.episodes:
                entry["valid_mrr"] = validate()
                log.info("episode %d loss %.5f valid MRR %.4f", state.episode, loss, entry["valid_mrr"])
            state.history.append(entry)
            if log_fh:
                log_fh.write(json.dumps(entry) + "\n")
    finally:
        if log_fh:
            log_fh.close()

    result = TrainResult(state.best_params, state.params, state.best_valid_mrr, state.history)
    if run_dir is not None:
        meta = {"num_timestamps": ds.num_timestamps}
        save_checkpoint(os.path.join(run_dir, "best.ckpt"), result.best, config, meta)
        save_checkpoint(os.path.join(run_dir, "last.ckpt"), result.last, config, meta)
    return result

"""Triplet training: label-pair batches, semi-hard mining, clipped Adam."""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .corpus import FunctionRecord
from .curation import LabelTable
from .errors import DimensionError, NonFiniteGradientError, SamplingError
from .model import (
    EPS,
    ModelConfig,
    ModelParameters,
    TripletBatch,
    backward_from_embedding_grads,
    forward_with_cache,
    init_params,
    load_checkpoint,
    load_optimizer_state,
    pairwise_cosine_distances,
    read_header,
    save_checkpoint,
    triplet_loss_from_embeddings,
)

log = logging.getLogger(__name__)

SEMI_HARD = "SemiHard"
HARD = "Hard"
_CATEGORY = {0: SEMI_HARD, 1: HARD}


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 0.2
    learning_rate: float = 0.005
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_lo: float = -1.0
    clip_hi: float = 1.0
    labels_per_batch: int = 300
    functions_per_epoch: int = 10_000_000
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not self.clip_lo < self.clip_hi:
            raise ValueError("clip_lo must be below clip_hi")
        if self.labels_per_batch < 2:
            raise ValueError("labels_per_batch must be at least 2")
        if self.epochs < 0 or self.functions_per_epoch < 1:
            raise ValueError("epochs must be >= 0 and functions_per_epoch >= 1")

    @property
    def batch_size(self) -> int:
        return 2 * self.labels_per_batch

    @property
    def steps_per_epoch(self) -> int:
        return max(1, self.functions_per_epoch // self.batch_size)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in d.items():
            if k in kinds:
                out[k] = int(v) if kinds[k] in ("int", int) else float(v)
        return cls(**out)


def cosine_distance(u, v, eps: float = EPS) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionError(f"cosine_distance needs equal-length vectors, got {u.shape} and {v.shape}")
    nu = math.sqrt(float(u @ u)) + eps
    nv = math.sqrt(float(v @ v)) + eps
    return 1.0 - float(u @ v) / (nu * nv)


def triplet_hinge(d_ap: float, d_an: float, alpha: float) -> float:
    return max(d_ap - d_an + alpha, 0.0)


@dataclass(frozen=True)
class Triplet:
    anchor: int
    positive: int
    negative: int
    category: str
    loss: float


def mine_triplets(dist: np.ndarray, labels: Sequence[int], alpha: float) -> list[Triplet]:
    """One triplet per anchor, positive fixed to the anchor's pair partner.

    Prefers the semi-hard negative closest to the anchor; falls back to the
    hard negative farthest from it; skips anchors with only easy negatives.
    """
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    a, p, n, c = _kernels.mine_triplets(dist, labels, float(alpha))
    return [
        Triplet(int(i), int(j), int(k), _CATEGORY[int(cat)],
                triplet_hinge(dist[i, j], dist[i, k], alpha))
        for i, j, k, cat in zip(a, p, n, c)
    ]


def eligible_labels(records: Sequence[FunctionRecord], table: LabelTable) -> tuple[list[int], dict[int, list[int]]]:
    """Labels with at least two members, ordered by first appearance."""
    members: dict[int, list[int]] = {}
    for i, r in enumerate(records):
        members.setdefault(table.label_of[r.id], []).append(i)
    order = [l for l, m in members.items() if len(m) >= 2]
    return order, members


def sample_batch(records: Sequence[FunctionRecord], table: LabelTable, n_labels: int,
                 rng: np.random.Generator, _eligible=None):
    """``n_labels`` distinct labels, two distinct records each, laid out as pairs.

    Returns (records, label ids); items 2i and 2i+1 share a label.
    """
    order, members = _eligible if _eligible is not None else eligible_labels(records, table)
    if len(order) < n_labels:
        raise SamplingError(
            f"need {n_labels} labels with >= 2 functions, only {len(order)} available "
            f"(short by {n_labels - len(order)})"
        )
    chosen = rng.choice(len(order), size=n_labels, replace=False)
    batch, labels = [], []
    for li in chosen:
        lab = order[li]
        mem = members[lab]
        i, j = rng.choice(len(mem), size=2, replace=False)
        batch.extend((records[mem[i]], records[mem[j]]))
        labels.extend((lab, lab))
    return batch, np.asarray(labels, dtype=np.int64)


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: ModelParameters) -> "OptimizerState":
        return cls([np.zeros(t.shape) for t in params.tensors()],
                   [np.zeros(t.shape) for t in params.tensors()], 0)


def adam_step(params: ModelParameters, grads: ModelParameters, state: OptimizerState,
              config: TrainConfig) -> tuple[ModelParameters, OptimizerState]:
    """Clip raw gradients elementwise, then one bias-corrected Adam update.

    The parameter dtype is preserved; arithmetic is float64.
    """
    gs = grads.tensors()
    for name, g in zip(grads.items(), gs):
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(f"non-finite gradient in {name[0]}")
    t = state.step + 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.tensors(), gs, state.m, state.v):
        g = np.clip(g.astype(np.float64), config.clip_lo, config.clip_hi)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        update = config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
        new_p.append((p.astype(np.float64) - update).astype(p.dtype))
        new_m.append(m)
        new_v.append(v)
    return ModelParameters(*new_p), OptimizerState(new_m, new_v, t)


@dataclass
class StepResult:
    loss: float
    n_semi_hard: int
    n_hard: int
    n_skipped: int
    loss_per_anchor: float = 0.0


def train_step(params, state, batch_records, labels, model_config, train_config):
    p64 = params.astype(np.float64)
    inputs = [r.bytes for r in batch_records]
    embs, caches = forward_with_cache(p64, model_config, inputs)
    dist = pairwise_cosine_distances(embs)
    a, p, n, c = _kernels.mine_triplets(dist, labels, float(train_config.margin))
    tb = TripletBatch(inputs, a, p, n, c)
    loss, d_emb = triplet_loss_from_embeddings(embs, tb, train_config.margin, dist)
    grads = backward_from_embedding_grads(p64, model_config, caches, d_emb)
    params, state = adam_step(params, grads, state, train_config)
    n_semi = int((c == 0).sum())
    # hinge sum spread over every function in the batch, skipped anchors counting as zero
    per_anchor = loss * len(c) / len(inputs) if inputs else 0.0
    return params, state, StepResult(loss, n_semi, len(c) - n_semi, len(inputs) - len(c), per_anchor)


def _step_rng(seed: int, step: int) -> np.random.Generator:
    # Batch sampling depends only on (seed, step), so resumed runs match.
    return np.random.default_rng([seed, step])


def train(
    records: Sequence[FunctionRecord],
    table: LabelTable,
    model_config: ModelConfig,
    train_config: TrainConfig,
    checkpoint_dir: str | os.PathLike | None = None,
    log_path: str | os.PathLike | None = None,
    resume: bool = False,
    provenance: dict | None = None,
    max_steps: int | None = None,
) -> tuple[ModelParameters, list[dict]]:
    """Run the full training loop; returns final parameters and the log entries emitted.

    With ``checkpoint_dir`` set, a checkpoint (including optimizer state) is
    written after every epoch, on interrupt, and at the end. ``resume``
    continues from that checkpoint. ``max_steps`` stops early after that
    many global steps, leaving a resumable checkpoint.
    """
    total_steps = train_config.epochs * train_config.steps_per_epoch
    params = init_params(model_config, train_config.seed)
    state = OptimizerState.zeros(params)
    start = 0
    if resume and checkpoint_dir is not None and (Path(checkpoint_dir) / "header.json").exists():
        params, saved_cfg = load_checkpoint(checkpoint_dir)
        if saved_cfg != model_config:
            raise ValueError("checkpoint model config differs from the requested one")
        opt = load_optimizer_state(checkpoint_dir, params)
        if opt is not None:
            state = OptimizerState(opt[0], opt[1], opt[2])
        start = int(read_header(checkpoint_dir).get("train_state", {}).get("global_step", state.step))
        log.info("resuming from step %d", start)

    eligible = eligible_labels(records, table) if total_steps > start else None
    entries: list[dict] = []
    log_fh = None
    if log_path is not None:
        log_fh = open(log_path, "a" if resume and start > 0 else "w", encoding="utf-8")

    def checkpoint(step_done: int):
        if checkpoint_dir is None:
            return
        save_checkpoint(
            params, model_config, checkpoint_dir, seed=train_config.seed,
            provenance=provenance,
            optimizer=(state.m, state.v, state.step),
            extra={"train_config": train_config.to_dict(),
                   "train_state": {"global_step": step_done, "total_steps": total_steps}},
        )

    step = start
    end = total_steps if max_steps is None else min(total_steps, max_steps)
    epoch_acc = None
    try:
        while step < end:
            epoch = step // train_config.steps_per_epoch
            t0 = time.perf_counter()
            batch, labels = sample_batch(records, table, train_config.labels_per_batch,
                                         _step_rng(train_config.seed, step), eligible)
            params, state, res = train_step(params, state, batch, labels, model_config, train_config)
            entry = {
                "step": step,
                "epoch": epoch,
                "loss": res.loss,
                "loss_per_anchor": res.loss_per_anchor,
                "n_semi_hard": res.n_semi_hard,
                "n_hard": res.n_hard,
                "n_skipped": res.n_skipped,
                "wall_ms": round(1000.0 * (time.perf_counter() - t0), 3),
            }
            entries.append(entry)
            if log_fh is not None:
                log_fh.write(json.dumps(entry) + "\n")
            step += 1
            if epoch_acc is None:
                epoch_acc = [0.0, 0, 0, 0, 0]
            epoch_acc[0] += res.loss
            epoch_acc[1] += 1
            epoch_acc[2] += res.n_semi_hard
            epoch_acc[3] += res.n_hard
            epoch_acc[4] += res.n_skipped
            if step % train_config.steps_per_epoch == 0:
                log.info("epoch %d: mean loss %.5f, semi-hard %d, hard %d, skipped %d",
                         epoch, epoch_acc[0] / epoch_acc[1], *epoch_acc[2:])
                epoch_acc = None
                if log_fh is not None:
                    log_fh.flush()
                checkpoint(step)
    except KeyboardInterrupt:
        log.warning("interrupted at step %d; saving checkpoint", step)
        checkpoint(step)
        raise
    finally:
        if log_fh is not None:
            log_fh.close()
    checkpoint(step)
    return params, entries

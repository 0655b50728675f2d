"""Hybrid training: Monte-Carlo policy gradient with an NDCG reward, plus a
position-discounted per-step multi-label cross-entropy regularizer."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .model import DivNetParams, ModelConfig, SlateDecode, decode_slate
from .tensor import Adam, Tensor


@dataclass
class TrainConfig:
    alpha: float = 0.1
    lam: float = 0.5                      # regularization coefficient
    learning_rate: float = 0.01
    batch_size: int = 256
    samples_per_instance: int = 4
    step_weight_mode: str = "log-discount"   # or "uniform"
    baseline_mode: str = "batch-mean"        # or "none"
    supervision_trajectory: str = "sampled"  # or "logged-order"
    sample_trajectories: bool = True         # False = "remove sampling" ablation
    reward_cutoff: int | None = None         # None = full-list NDCG
    seed: int = 0
    max_epochs: int = 10
    patience: int = 5                        # early stop on validation NDCG@10
    val_cutoff: int = 10

    def __post_init__(self):
        if self.lam < 0 or self.alpha < 0:
            raise ValueError("lambda and alpha must be >= 0")
        if self.batch_size < 1 or self.samples_per_instance < 1:
            raise ValueError("batch_size and samples_per_instance must be >= 1")
        if self.step_weight_mode not in ("uniform", "log-discount"):
            raise ValueError(f"unknown step_weight_mode {self.step_weight_mode!r}")
        if self.baseline_mode not in ("none", "batch-mean"):
            raise ValueError(f"unknown baseline_mode {self.baseline_mode!r}")
        if self.supervision_trajectory not in ("sampled", "logged-order"):
            raise ValueError(
                f"unknown supervision_trajectory {self.supervision_trajectory!r}")

    def to_dict(self):
        return {k: getattr(self, k) for k in (
            "alpha", "lam", "learning_rate", "batch_size", "samples_per_instance",
            "step_weight_mode", "baseline_mode", "supervision_trajectory",
            "sample_trajectories", "reward_cutoff", "seed", "max_epochs",
            "patience", "val_cutoff")}


@dataclass
class TrainState:
    params: DivNetParams
    optimizer: Adam
    epoch: int = 0
    best_val: float = -1.0
    best_params: DivNetParams | None = None
    history: list = field(default_factory=list)
    rng: np.random.Generator | None = None


def ndcg_reward(decode: SlateDecode, labels, cutoff: int | None = None) -> float:
    """NDCG of the click labels arranged in decode order (full list by default;
    0 when there are no positives)."""
    labels = np.asarray(labels)
    ranked = labels[decode.permutation]
    k = cutoff if cutoff is not None else len(ranked)
    return metrics.ndcg_at_k(ranked, k)


def reinforce_loss(decodes, rewards, baseline_mode: str = "batch-mean",
                   allow_greedy: bool = False) -> Tensor:
    """-(1/S) * sum_s (R_s - b) * log P(pi_s). Requires sampled trajectories:
    the log-prob of an argmax path is not the Monte-Carlo estimator."""
    if not decodes:
        raise ValueError("reinforce_loss: no trajectories")
    if not allow_greedy:
        for d in decodes:
            if d.mode != "sample":
                raise ValueError(
                    "reinforce_loss needs sample-mode decodes "
                    "(greedy paths are not Monte-Carlo draws)")
    rewards = [float(r) for r in rewards]
    b = sum(rewards) / len(rewards) if baseline_mode == "batch-mean" else 0.0
    loss = Tensor(0.0)
    for d, r in zip(decodes, rewards):
        loss = loss + d.log_prob * (-(r - b) / len(decodes))
    return loss


def step_weight(t: int, mode: str) -> float:
    """1-indexed step weight; log-discount mirrors the NDCG position discount."""
    if mode == "uniform":
        return 1.0
    return 1.0 / math.log2(t + 1)


def supervised_step_loss(decode: SlateDecode, labels,
                         step_weight_mode: str = "log-discount") -> Tensor:
    """sum_t w_t * (-sum_{c in R_t} label_c * log P_t(c)) along the decode's
    own trajectory."""
    labels = np.asarray(labels)
    loss = Tensor(0.0)
    for t, probs in enumerate(decode.step_probabilities, start=1):
        w = step_weight(t, step_weight_mode)
        for c, p in probs.items():
            if labels[c] == 1:
                loss = loss + p.log() * (-w)
    return loss


def combined_loss(reinforce_term: Tensor, supervised_term: Tensor,
                  lam: float) -> Tensor:
    return reinforce_term + supervised_term * lam


def instance_loss(inst, params: DivNetParams, cfg: TrainConfig, rng) -> Tensor:
    """Full hybrid objective for one slate: sampled (or greedy, for the
    remove-sampling ablation) trajectories feed both loss terms."""
    if cfg.sample_trajectories:
        decodes = [decode_slate(inst, params, alpha=cfg.alpha, mode="sample", rng=rng)
                   for _ in range(cfg.samples_per_instance)]
    else:
        decodes = [decode_slate(inst, params, alpha=cfg.alpha, mode="greedy")]
    rewards = [ndcg_reward(d, inst.click_labels, cfg.reward_cutoff) for d in decodes]
    r_term = reinforce_loss(decodes, rewards, cfg.baseline_mode,
                            allow_greedy=not cfg.sample_trajectories)

    if cfg.supervision_trajectory == "logged-order":
        forced = decode_slate(inst, params, alpha=cfg.alpha,
                              forced_order=inst.display_order)
        s_term = supervised_step_loss(forced, inst.click_labels, cfg.step_weight_mode)
    else:
        s_term = Tensor(0.0)
        for d in decodes:
            s_term = s_term + supervised_step_loss(
                d, inst.click_labels, cfg.step_weight_mode) * (1.0 / len(decodes))
    return combined_loss(r_term, s_term, cfg.lam), float(r_term.data), float(s_term.data)


def validate(params: DivNetParams, instances, cfg: TrainConfig):
    report = metrics.evaluate(
        lambda inst: decode_slate(inst, params, alpha=cfg.alpha, mode="greedy").permutation,
        instances, cutoffs=(cfg.val_cutoff,), include_ild=False)
    return report.get("ndcg", cfg.val_cutoff), report.get("map", cfg.val_cutoff)


def train(dataset, cfg: TrainConfig, model_cfg: ModelConfig | None = None,
          params: DivNetParams | None = None, val_instances=None,
          log_stream=None) -> TrainState:
    """Algorithm: per batch, sample trajectories per slate, minimize the hybrid
    loss with Adam; track the best validation NDCG checkpoint; early-stop on
    patience. Deterministic under a fixed seed."""
    dataset = list(dataset)
    if not dataset:
        raise ValueError("train: empty training split")
    if params is None:
        if model_cfg is None:
            raise ValueError("train needs model_cfg or initial params")
        params = DivNetParams.init(model_cfg, seed=cfg.seed)
    params.set_requires_grad(True)
    if val_instances is None:
        val_instances = dataset

    rng = np.random.default_rng(cfg.seed)
    opt = Adam(params.tensors(), lr=cfg.learning_rate)
    state = TrainState(params=params, optimizer=opt, rng=rng)
    state.best_params = params.copy()
    state.best_val, _ = validate(params, val_instances, cfg)
    bad_epochs = 0

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.monotonic()
        order = rng.permutation(len(dataset))
        epoch_r = 0.0
        epoch_s = 0.0
        n_batches = 0
        for start in range(0, len(dataset), cfg.batch_size):
            batch = [dataset[i] for i in order[start:start + cfg.batch_size]]
            loss = Tensor(0.0)
            for inst in batch:
                il, r_val, s_val = instance_loss(inst, params, cfg, rng)
                if not np.isfinite(il.data):
                    raise FloatingPointError(
                        f"non-finite loss on query {inst.query_id} "
                        f"(epoch {epoch})")
                loss = loss + il * (1.0 / len(batch))
                epoch_r += r_val / len(batch)
                epoch_s += s_val / len(batch)
            n_batches += 1
            loss.backward()
            opt.step()
        val_ndcg, val_map = validate(params, val_instances, cfg)
        record = {
            "epoch": epoch,
            "train_reinforce_loss": epoch_r / max(n_batches, 1),
            "train_supervised_loss": epoch_s / max(n_batches, 1),
            "val_ndcg": val_ndcg,
            "val_map": val_map,
            "wall_time_s": time.monotonic() - t0,
        }
        state.history.append(record)
        if log_stream is not None:
            # wall time stays out of the artifact so identical runs stay
            # byte-identical
            logged = {k: v for k, v in record.items() if k != "wall_time_s"}
            log_stream.write(json.dumps(logged, sort_keys=True) + "\n")
        state.epoch = epoch
        if val_ndcg > state.best_val:
            state.best_val = val_ndcg
            state.best_params = params.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break
    return state

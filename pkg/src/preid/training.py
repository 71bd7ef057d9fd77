"""Training loop: BCE objective, AdamW, one-cycle LR schedule, clipping.

One epoch is one pass over every unique object in the dataset (one sampled
pair each). The schedule rises from the base learning rate to 10x over the
first 40% of steps and decays to 1e-4x over the remainder, cosine in both
phases.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .data.records import ReidDataset
from .model.checkpoint import save_checkpoint
from .model.network import ReidModel, resample_points
from .sampling import MATCH, even_epoch, uniform_epoch
from .util import atomic_write, keyed_rng, stable_hash

EVEN = "even"
UNIFORM = "uniform"


class TrainingError(RuntimeError):
    pass


@dataclass
class ScheduleConfig:
    target_ratio_up: float = 10.0
    target_ratio_down: float = 1e-4
    step_ratio_up: float = 0.4

    def __post_init__(self):
        if not (0.0 < self.step_ratio_up < 1.0):
            raise ValueError("step_ratio_up must lie in (0, 1)")


@dataclass
class TrainConfig:
    lr_base: float = 3e-4
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    batch_size: int = 256
    epochs: int = 100
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    seed: int = 0
    sampler: str = EVEN
    checkpoint_every: int = 0          # epochs; 0 means epochs // 5
    early_stop_accuracy: float | None = None   # stop once the running batch
                                               # accuracy reaches this level

    def __post_init__(self):
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.sampler not in (EVEN, UNIFORM):
            raise ValueError(f"unknown sampler {self.sampler!r}")


@dataclass
class TrainReport:
    steps: int
    epochs: int
    final_loss: float
    final_accuracy: float
    stopped_early: bool
    checkpoint_path: str
    metrics_path: str


def bce_loss(probs, labels) -> float:
    """Mean binary cross-entropy on probabilities, clamped away from {0, 1}."""
    x = np.clip(np.asarray(probs, dtype=np.float64), 1e-7, 1 - 1e-7)
    y = np.asarray(labels, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"probs shape {x.shape} != labels shape {y.shape}")
    return float(-(y * np.log(x) + (1 - y) * np.log(1 - x)).mean())


class AdamW:
    """Decoupled-weight-decay Adam over a parameter store."""

    def __init__(self, params: nn.ParameterStore, weight_decay: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.wd = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, tensor in self.params.items():
            g = tensor.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in parameter {name!r}")
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / (1 - b1 ** self.t)
            v_hat = self.v[name] / (1 - b2 ** self.t)
            new = tensor.data - lr * self.wd * tensor.data \
                - lr * m_hat / (np.sqrt(v_hat) + self.eps)
            tensor.data = new.astype(tensor.data.dtype, copy=False)


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """One-cycle cosine schedule value at a given step."""
    if not (0 <= step <= total_steps):
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    base = cfg.lr_base
    peak = base * cfg.schedule.target_ratio_up
    floor = base * cfg.schedule.target_ratio_down
    up = cfg.schedule.step_ratio_up * total_steps
    if step <= up:
        t = step / up if up > 0 else 1.0
        return base + (peak - base) * (1 - math.cos(math.pi * t)) / 2
    t = (step - up) / (total_steps - up)
    return floor + (peak - floor) * (1 + math.cos(math.pi * t)) / 2


def clip_gradients(params: nn.ParameterStore, max_norm: float = 1.0) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm.

    Returns the pre-clip global norm.
    """
    total = 0.0
    for _, tensor in params.items():
        if tensor.grad is not None:
            total += float((tensor.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for _, tensor in params.items():
            if tensor.grad is not None:
                tensor.grad = tensor.grad * scale
    return norm


def _pack_batch(ds: ReidDataset, pairs, n_points: int, seed: int, epoch: int):
    a, b, labels = [], [], []
    for pair in pairs:
        rng_a = keyed_rng(seed, "pts", epoch, stable_hash(pair.obs_a), 0)
        rng_b = keyed_rng(seed, "pts", epoch, stable_hash(pair.obs_b), 1)
        a.append(resample_points(ds.get(pair.obs_a).points, n_points, rng_a))
        b.append(resample_points(ds.get(pair.obs_b).points, n_points, rng_b))
        labels.append(1.0 if pair.label == MATCH else 0.0)
    return np.stack(a), np.stack(b), np.asarray(labels, dtype=np.float32)


def train(model: ReidModel, ds: ReidDataset, cfg: TrainConfig, out_dir) -> TrainReport:
    if len(ds) == 0 or not ds.index:
        raise ValueError("cannot train on an empty dataset")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sampler = even_epoch if cfg.sampler == EVEN else uniform_epoch
    n_objects = ds.n_objects()
    steps_per_epoch = math.ceil(n_objects / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    ckpt_every = cfg.checkpoint_every or max(1, cfg.epochs // 5)
    n_points = model.encoder_cfg.n_points

    optimizer = AdamW(model.params, weight_decay=cfg.weight_decay)
    model.params.set_requires_grad(True)
    ckpt_path = out_dir / "model.ckpt"
    metrics_path = out_dir / "metrics.jsonl"

    step = 0
    loss_val = float("nan")
    acc_window: list[float] = []
    stopped = False
    with atomic_write(metrics_path) as metrics:
        for epoch in range(cfg.epochs):
            pairs = sampler(ds, cfg.seed, epoch=epoch)
            order = keyed_rng(cfg.seed, "order", epoch).permutation(len(pairs))
            pairs = [pairs[i] for i in order]
            for lo in range(0, len(pairs), cfg.batch_size):
                batch = pairs[lo:lo + cfg.batch_size]
                a, b, labels = _pack_batch(ds, batch, n_points, cfg.seed, epoch)
                model.params.zero_grad()
                logits = model.forward_logits(a, b)
                loss = nn.bce_with_logits(logits, labels)
                loss_val = loss.item()
                if not math.isfinite(loss_val):
                    raise TrainingError(
                        f"non-finite loss at step {step}; last checkpoint kept at {ckpt_path}"
                    )
                loss.backward()
                grad_norm = clip_gradients(model.params, cfg.clip_norm)
                lr = lr_at(step, total_steps, cfg)
                optimizer.step(lr)
                preds = (logits.data >= 0).astype(np.float32)
                acc = float((preds == labels).mean())
                metrics.write(json.dumps({
                    "step": step, "epoch": epoch,
                    "loss": round(loss_val, 8), "lr": lr,
                    "grad_norm": round(grad_norm, 8),
                    "batch_accuracy": acc,
                }) + "\n")
                step += 1
                acc_window = (acc_window + [acc])[-5:]
                if (cfg.early_stop_accuracy is not None
                        and len(acc_window) == 5
                        and sum(acc_window) / 5 >= cfg.early_stop_accuracy):
                    stopped = True
                    break
            if stopped or (epoch + 1) % ckpt_every == 0:
                save_checkpoint(model, ckpt_path)
            if stopped:
                break
    save_checkpoint(model, ckpt_path)
    model.params.set_requires_grad(False)
    return TrainReport(
        steps=step,
        epochs=epoch + 1,
        final_loss=loss_val,
        final_accuracy=acc_window[-1] if acc_window else float("nan"),
        stopped_early=stopped,
        checkpoint_path=str(ckpt_path),
        metrics_path=str(metrics_path),
    )

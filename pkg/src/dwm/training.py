"""Masked binary cross-entropy training with Adam and early stopping.

One training episode processes one batch of common-layout sequences:
generate, forward, masked loss, backward, clipped Adam step. Every
``validation_interval`` episodes the model is scored on a fixed batch of
longer validation sequences (drawn from the validation stream, which the
training stream never touches); training stops when that validation loss
drops below the threshold or the episode cap is reached, and the
parameters with the best validation loss are returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .errors import ConfigError
from .tasks import (
    TaskSpec,
    generate,
    memory_size_for,
    min_memory_size,
    regime_for,
    stack_episodes,
)

PROB_EPS = 1e-12  # probability clamp inside the loss


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    batch_size: int = 16
    max_episodes: int = 100_000
    early_stop_threshold: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    validation_interval: int = 100
    grad_clip_norm: float = 10.0
    # optional stop once accuracy on training-length sequences reaches
    # this level (used for baselines whose validation loss plateaus)
    train_accuracy_stop: float | None = None
    # optional fixed memory size (limited-memory experiments); default is
    # one address per input step
    memory_size: int | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.early_stop_threshold <= 0:
            raise ConfigError("early_stop_threshold must be positive")
        if self.batch_size < 1 or self.max_episodes < 1 or self.validation_interval < 1:
            raise ConfigError("batch_size, max_episodes and validation_interval must be >= 1")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.train_accuracy_stop is not None and not (0.0 < self.train_accuracy_stop <= 1.0):
            raise ConfigError("train_accuracy_stop must lie in (0, 1]")


def bce_loss(logits: Sequence[Tensor], targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean binary cross-entropy over masked (step, bit) pairs.

    ``logits`` is one tensor per timestep ([bits] or [B, bits]); targets
    has matching shape [T, ...]; mask selects the scored steps. The
    probabilities are clamped away from 0 and 1 before the logs.
    """
    targets = np.asarray(targets, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if len(logits) != targets.shape[0] or len(logits) != mask.shape[0]:
        raise ValueError("logits, targets and mask disagree on sequence length")
    steps = np.flatnonzero(mask)
    if steps.size == 0:
        raise ValueError("mask selects no steps")
    total = None
    count = 0
    for t in steps:
        y = targets[t]
        p = ad.clip(ad.sigmoid(logits[t]), PROB_EPS, 1.0 - PROB_EPS)
        term = ad.add(
            ad.mul(Tensor(y), ad.log(p)),
            ad.mul(Tensor(1.0 - y), ad.log(ad.sub(Tensor(1.0), p))),
        )
        summed = ad.tsum(term)
        total = summed if total is None else ad.add(total, summed)
        count += y.size
    return ad.mul(total, Tensor(-1.0 / count))


def accuracy(logits, targets: np.ndarray, mask: np.ndarray) -> float:
    """Fraction of masked bits whose thresholded prediction
    (sigmoid(logit) > 0.5, i.e. logit > 0) matches the target."""
    if isinstance(logits, (list, tuple)):
        logits = np.stack([t.data if isinstance(t, Tensor) else t for t in logits])
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask selects no steps")
    pred = logits[mask] > 0.0
    truth = targets[mask] > 0.5
    return float(np.mean(pred == truth))


class Adam:
    """Standard first/second-moment adaptive update with bias correction."""

    def __init__(
        self,
        params: dict[str, Tensor],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    sq = 0.0
    for p in params.values():
        if p.grad is not None:
            sq += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(sq))
    if norm > max_norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


@dataclass
class TrainResult:
    stop_reason: str  # "validation-threshold" | "episode-cap" | "train-accuracy"
    episodes: int
    best_val_loss: float
    best_val_accuracy: float
    best_params: dict[str, np.ndarray]
    curve: list[dict] = field(default_factory=list)


def _forward_loss(model, episodes, memory_size):
    inputs, targets, mask = stack_episodes(episodes)
    num_addresses = memory_size if memory_size is not None else memory_size_for(episodes)
    logits, _ = model.forward(inputs, num_addresses=num_addresses)
    return logits, targets, mask


_ACC_STREAM_OFFSET = 1_000_000_000  # train-regime batches reserved for accuracy probes


def _train_length_accuracy(model, task_spec, train_regime, config, episode, batches=4):
    """Accuracy on fresh training-length batches (stop-criterion probe)."""
    hits = []
    with no_grad():
        for i in range(batches):
            probe = generate(
                task_spec,
                train_regime,
                config.batch_size,
                batch_index=_ACC_STREAM_OFFSET + episode * batches + i,
            )
            logits, targets, mask = _forward_loss(model, probe, config.memory_size)
            hits.append(accuracy(logits, targets, mask))
    return float(np.mean(hits))


def train(
    model,
    task_spec: TaskSpec,
    config: TrainConfig,
    start_episode: int = 0,
) -> TrainResult:
    """Run the training loop; returns the best-validation checkpoint.

    ``start_episode`` resumes the episode counter (the data stream is
    counter-keyed, so episode e draws the same batch no matter when it
    runs).
    """
    train_regime = regime_for(task_spec.task, "train")
    val_regime = regime_for(task_spec.task, "val")
    val_episodes = generate(task_spec, val_regime, config.batch_size, batch_index=0)
    if config.memory_size is not None and config.memory_size < min_memory_size(val_episodes):
        raise ConfigError(
            f"memory_size={config.memory_size} cannot fit one subsequence "
            f"(needs >= {min_memory_size(val_episodes)})"
        )

    optimizer = Adam(
        model.params,
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
    )
    best_val = np.inf
    best_acc = 0.0
    best_params = {k: np.array(p.data) for k, p in model.params.items()}
    curve: list[dict] = []
    stop_reason = "episode-cap"
    episodes_run = start_episode

    for ep in range(start_episode, config.max_episodes):
        batch = generate(task_spec, train_regime, config.batch_size, batch_index=ep)
        logits, targets, mask = _forward_loss(model, batch, config.memory_size)
        loss = bce_loss(logits, targets, mask)
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise TrainingDivergedError(
                f"non-finite training loss {loss_value!r} at episode {ep + 1}"
            )
        optimizer.zero_grad()
        loss.backward()
        clip_global_norm(model.params, config.grad_clip_norm)
        optimizer.step()
        episodes_run = ep + 1
        row = {"episode": episodes_run, "train_loss": loss_value}

        if episodes_run % config.validation_interval == 0:
            with no_grad():
                v_logits, v_targets, v_mask = _forward_loss(
                    model, val_episodes, config.memory_size
                )
                val_loss = bce_loss(v_logits, v_targets, v_mask).item()
                val_acc = accuracy(v_logits, v_targets, v_mask)
            row["val_loss"] = val_loss
            row["val_accuracy"] = val_acc
            if val_loss < best_val:
                best_val = val_loss
                best_acc = val_acc
                best_params = {k: np.array(p.data) for k, p in model.params.items()}
            if val_loss < config.early_stop_threshold:
                curve.append(row)
                stop_reason = "validation-threshold"
                break
            if config.train_accuracy_stop is not None:
                train_acc = _train_length_accuracy(
                    model, task_spec, train_regime, config, episodes_run
                )
                row["train_accuracy"] = train_acc
                if train_acc >= config.train_accuracy_stop:
                    curve.append(row)
                    stop_reason = "train-accuracy"
                    best_params = {k: np.array(p.data) for k, p in model.params.items()}
                    best_acc = train_acc
                    break
        curve.append(row)

    return TrainResult(
        stop_reason=stop_reason,
        episodes=episodes_run,
        best_val_loss=float(best_val),
        best_val_accuracy=float(best_acc),
        best_params=best_params,
        curve=curve,
    )


def write_curve_csv(path, curve: list[dict]) -> None:
    """Loss curve as CSV: episode, train_loss, val_loss, val_accuracy."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "train_loss", "val_loss", "val_accuracy"])
        for row in curve:
            writer.writerow(
                [
                    row["episode"],
                    f"{row['train_loss']:.10g}",
                    f"{row['val_loss']:.10g}" if "val_loss" in row else "",
                    f"{row['val_accuracy']:.6g}" if "val_accuracy" in row else "",
                ]
            )

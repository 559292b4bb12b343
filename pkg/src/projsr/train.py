"""External training loop: batching, schedule, clipping, checkpoints.

The learning rate decays by a factor of 10 every `lr_decay_epochs`
epochs. By default the decay is applied continuously (evaluated at the
fractional epoch of every step) so it is smooth; a staircase mode holds
the rate constant within each decay period. Both hit the same anchor
values at period boundaries.

Shuffling draws a fresh permutation from an RNG seeded with
(seed, epoch), so a run resumed from an epoch-boundary checkpoint replays
the exact same batches and is bitwise identical to an uninterrupted run.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import model as model_mod
from .checkpoint import Checkpoint
from .data import PatchPair
from .engine import OptimizerState, mse_loss, sgd_step
from .errors import ConfigError, TrainingDiverged


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 90
    batch_size: int = 64
    lr0: float = 0.1
    lr_decay_epochs: float = 30.0
    lr_staircase: bool = False
    lr_fixed: float | None = None  # disables the schedule (finetuning)
    momentum: float = 0.9
    weight_decay: float = 1e-4
    clip_theta: float = 0.001
    seed: int = 0
    checkpoint_every: int = 10  # epochs between periodic checkpoints

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        for name in ("lr0", "lr_decay_epochs", "clip_theta"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.lr_fixed is not None and not self.lr_fixed > 0:
            raise ConfigError("lr_fixed must be positive")


def lr_schedule(
    epoch: float,
    lr0: float = 0.1,
    decay_epochs: float = 30.0,
    staircase: bool = False,
) -> float:
    """lr(e) = lr0 * 10^(-e / decay_epochs), optionally floored per period."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    e = np.floor(epoch / decay_epochs) * decay_epochs if staircase else epoch
    return lr0 * 10.0 ** (-e / decay_epochs)


def config_lr(cfg: TrainConfig, epoch: float) -> float:
    if cfg.lr_fixed is not None:
        return cfg.lr_fixed
    return lr_schedule(epoch, cfg.lr0, cfg.lr_decay_epochs, cfg.lr_staircase)


@dataclass
class LogRow:
    step: int
    epoch: float
    lr: float
    loss: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[LogRow] = field(default_factory=list)


def _batch_tensors(pairs: list[PatchPair], idx: np.ndarray, dtype):
    x = np.stack([pairs[i].input for i in idx])[:, None, :, :].astype(dtype)
    hr = np.stack([pairs[i].input + pairs[i].target for i in idx])
    return x, hr[:, None, :, :].astype(dtype)


def train(
    net: model_mod.Network,
    pairs: list[PatchPair],
    cfg: TrainConfig,
    *,
    optimizer: OptimizerState | None = None,
    start_epoch: int = 0,
    start_step: int = 0,
    metadata: dict[str, str] | None = None,
) -> TrainResult:
    """Train `net` in place on the materialized pair list.

    One epoch is one pass over the list. Aborts with TrainingDiverged on a
    non-finite loss, carrying the last epoch-boundary checkpoint.
    """
    if not pairs:
        raise ConfigError("training stream is empty")
    arrays = net.flat_arrays()
    if optimizer is None:
        optimizer = OptimizerState(
            learning_rate=config_lr(cfg, start_epoch),
            momentum=cfg.momentum,
            weight_decay=cfg.weight_decay,
            clip_theta=cfg.clip_theta,
        )
        optimizer.init_buffers(arrays)
    meta = dict(metadata or {})

    def snapshot(epochs_done: int, steps_done: int) -> Checkpoint:
        meta_now = dict(meta)
        meta_now.update(
            {
                "epochs_done": str(epochs_done),
                "steps_done": str(steps_done),
                "seed": str(cfg.seed),
                "batch_size": str(cfg.batch_size),
            }
        )
        return Checkpoint.from_network(net, optimizer=optimizer, metadata=meta_now)

    log: list[LogRow] = []
    step = start_step
    last_good = snapshot(start_epoch, step)
    n = len(pairs)
    batches = range(0, n, cfg.batch_size)
    num_batches = len(batches)
    dtype = net.dtype

    for epoch in range(start_epoch, cfg.epochs):
        perm = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        for bi, lo in enumerate(batches):
            x, hr = _batch_tensors(pairs, perm[lo : lo + cfg.batch_size], dtype)
            lr = config_lr(cfg, epoch + bi / num_batches)
            optimizer.learning_rate = lr
            _, grads, loss = model_mod.backward(
                net, x, lambda out: mse_loss(out, hr)
            )
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became {loss} at step {step} (epoch {epoch}); "
                    "last good checkpoint attached",
                    last_good=last_good,
                    step=step,
                )
            sgd_step(arrays, grads.flat_arrays(), optimizer)
            log.append(LogRow(step, epoch + bi / num_batches, lr, loss))
            step += 1
        if (epoch + 1 - start_epoch) % cfg.checkpoint_every == 0:
            last_good = snapshot(epoch + 1, step)

    return TrainResult(snapshot(cfg.epochs, step), log)


def finetune_config(cfg: TrainConfig, epochs: int, seed: int | None = None) -> TrainConfig:
    """Adaptation settings: fixed 1e-4 learning rate, schedule disabled."""
    return replace(
        cfg,
        epochs=epochs,
        lr_fixed=1e-4,
        seed=cfg.seed if seed is None else seed,
        checkpoint_every=max(1, epochs),
    )


def write_loss_csv(path, rows: list[LogRow]) -> None:
    """Loss log CSV, schema loss-v1: step, epoch, lr, loss."""
    with open(path, "w") as fh:
        fh.write("# projsr-csv loss-v1\n")
        fh.write("step,epoch,lr,loss\n")
        for r in rows:
            fh.write(f"{r.step},{r.epoch:.6f},{r.lr:.8g},{r.loss:.10g}\n")

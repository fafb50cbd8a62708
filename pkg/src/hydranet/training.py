"""Curriculum-sampled teacher-forcing training loop with joint loss-weight learning.

Each step draws a batch of spatial patches, folds the model over all training
months with observed inputs (no autoregression during training), compares the
step-t outputs to month t+1 targets under the six task losses, and updates
model parameters and the task log-variances together.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from ._util import seed_int
from .checkpoint import load_checkpoint, restore_optimizer, save_checkpoint
from .ingest import ValidationError, ZStackVolume, binarize
from .losses import (
    HEAD_NAMES,
    LossConfig,
    TaskLogVariances,
    focal_loss,
    multitask_combine,
    shrinkage_loss,
)
from .model import HydraNet, ModelConfig, init_model
from .sampling import CurriculumSchedule, PatchSequence, curriculum_probability, make_batch

OPTIMIZERS = ("adam_like", "sgd")


class TrainingDivergedError(RuntimeError):
    """A task loss went non-finite; the message names the offending head."""


@dataclass(frozen=True)
class TrainConfig:
    seed: int
    epochs: int = 100
    batches_per_epoch: int = 32
    batch_size: int = 4
    learning_rate: float = 1e-3
    optimizer: str = "adam_like"
    checkpoint_every: int = 25
    grad_clip: float = 5.0
    patch_size: int = 32

    def __post_init__(self):
        for name in ("epochs", "batches_per_epoch", "batch_size", "checkpoint_every", "patch_size"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.grad_clip <= 0:
            raise ValidationError("grad_clip must be positive")


@dataclass
class TrainLogEntry:
    epoch: int
    batch: int
    total_loss: float
    task_losses: list[float]
    logvars: list[float]
    curriculum_p: float
    wall_time: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, line: str) -> "TrainLogEntry":
        return cls(**json.loads(line))


def compute_targets(patch: PatchSequence) -> tuple[np.ndarray, np.ndarray]:
    """Next-month targets: reg[t] = input magnitude at month t+1, cls its binarization."""
    if patch.inputs.shape[0] < 2:
        raise ValidationError(f"need at least 2 months to form targets, got {patch.inputs.shape[0]}")
    reg = patch.inputs[1:].astype(np.float32)
    cls = binarize(reg).astype(np.float32)
    return reg, cls


def _head_loss(name, loss_fn, pred, target, loss_cfg) -> torch.Tensor:
    if not torch.isfinite(pred).all():
        raise TrainingDivergedError(f"non-finite predictions in head {name}")
    value = loss_fn(pred, target, loss_cfg)
    if not torch.isfinite(value):
        raise TrainingDivergedError(f"non-finite loss in head {name}: {float(value)}")
    return value


def _make_optimizer(name: str, params, lr: float) -> torch.optim.Optimizer:
    if name == "sgd":
        return torch.optim.SGD(params, lr=lr)
    return torch.optim.Adam(params, lr=lr)


def train_step(
    model: HydraNet,
    logvars: TaskLogVariances,
    optimizer: torch.optim.Optimizer,
    batch: list[PatchSequence],
    loss_cfg: LossConfig,
    grad_clip: float,
    generator: torch.Generator,
) -> tuple[float, list[float]]:
    """One gradient update on a patch batch; returns (total, per-head losses)."""
    inputs = torch.from_numpy(np.stack([p.inputs[:-1] for p in batch], axis=1))
    targets = [compute_targets(p) for p in batch]
    reg_t = torch.from_numpy(np.stack([t[0] for t in targets], axis=1))
    cls_t = torch.from_numpy(np.stack([t[1] for t in targets], axis=1))

    ps = inputs.shape[-1]
    state = model.init_state(inputs.shape[1], (inputs.shape[-2], ps))
    outputs, _ = model.forward_sequence(inputs, state, "train", generator)
    reg_pred = torch.stack([o.reg for o in outputs])
    cls_pred = torch.stack([o.cls for o in outputs])

    task_losses = []
    for i in range(3):
        task_losses.append(
            _head_loss(HEAD_NAMES[i], shrinkage_loss, reg_pred[:, :, i], reg_t[:, :, i], loss_cfg)
        )
    for i in range(3):
        task_losses.append(
            _head_loss(HEAD_NAMES[3 + i], focal_loss, cls_pred[:, :, i], cls_t[:, :, i], loss_cfg)
        )
    total = multitask_combine(torch.stack(task_losses), logvars.s)
    if not torch.isfinite(total):
        raise TrainingDivergedError(f"non-finite combined loss: {float(total)}")

    optimizer.zero_grad()
    total.backward()
    torch.nn.utils.clip_grad_norm_(
        list(model.parameters()) + [logvars.s], max_norm=grad_clip
    )
    optimizer.step()
    return float(total.detach()), [float(v.detach()) for v in task_losses]


def train_epoch(
    model: HydraNet,
    logvars: TaskLogVariances,
    optimizer: torch.optim.Optimizer,
    train_volume: ZStackVolume,
    epoch: int,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    schedule: CurriculumSchedule,
    sampler_rng: np.random.Generator,
    dropout_rng: torch.Generator,
) -> list[TrainLogEntry]:
    """batches_per_epoch curriculum-sampled gradient steps at one epoch."""
    entries = []
    p = curriculum_probability(epoch, schedule)
    for batch_idx in range(train_cfg.batches_per_epoch):
        t0 = time.time()
        batch = make_batch(
            train_volume, train_cfg.batch_size, epoch, schedule, sampler_rng, train_cfg.patch_size
        )
        total, task = train_step(
            model, logvars, optimizer, batch, loss_cfg, train_cfg.grad_clip, dropout_rng
        )
        entries.append(
            TrainLogEntry(
                epoch=epoch,
                batch=batch_idx,
                total_loss=total,
                task_losses=task,
                logvars=[float(v) for v in logvars.s.detach()],
                curriculum_p=p,
                wall_time=time.time() - t0,
            )
        )
    return entries


def fit(
    train_volume: ZStackVolume,
    model_cfg: ModelConfig,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    out_dir,
    schedule: CurriculumSchedule | None = None,
    resume: str | Path | None = None,
    extras: dict | None = None,
) -> Path:
    """Full training loop with periodic checkpointing; returns the checkpoint path.

    ``resume`` continues from a saved checkpoint with a trajectory identical to
    an uninterrupted run (parameters, optimizer moments, and both rng streams
    are restored).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "checkpoint.hydc"
    log_path = out_dir / "train_log.jsonl"
    if schedule is None:
        schedule = CurriculumSchedule(ramp_epochs=train_cfg.epochs)

    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.model_config != model_cfg:
            raise ValidationError(
                "resume checkpoint was trained with a different model config: "
                f"{ckpt.model_config} vs {model_cfg}"
            )
        model = ckpt.build_model()
        logvars = ckpt.build_logvars()
        optimizer = restore_optimizer(ckpt, model, logvars)
        if optimizer is None:
            optimizer = _make_optimizer(
                train_cfg.optimizer,
                list(model.parameters()) + [logvars.s],
                train_cfg.learning_rate,
            )
        sampler_rng = ckpt.numpy_generator()
        dropout_rng = ckpt.torch_generator()
        if sampler_rng is None or dropout_rng is None:
            raise ValidationError("resume checkpoint is missing rng snapshots")
        start_epoch = ckpt.epoch
        log_mode = "a"
    else:
        root = np.random.SeedSequence(train_cfg.seed)
        init_seq, sampler_seq, dropout_seq = root.spawn(3)
        model = init_model(model_cfg, seed_int(init_seq))
        logvars = TaskLogVariances()
        optimizer = _make_optimizer(
            train_cfg.optimizer, list(model.parameters()) + [logvars.s], train_cfg.learning_rate
        )
        sampler_rng = np.random.default_rng(sampler_seq)
        dropout_rng = torch.Generator().manual_seed(seed_int(dropout_seq))
        start_epoch = 0
        log_mode = "w"

    ckpt_extras = {
        "train_config": asdict(train_cfg),
        "loss_config": asdict(loss_cfg),
        "schedule": asdict(schedule),
        "train_months": [train_volume.month_ids[0], train_volume.month_ids[-1]],
        "grid": train_volume.grid.to_dict(),
        "channel_names": list(train_volume.channel_names),
    }
    if extras:
        ckpt_extras.update(extras)

    with open(log_path, log_mode, encoding="utf-8") as log:
        for epoch in range(start_epoch, train_cfg.epochs):
            entries = train_epoch(
                model, logvars, optimizer, train_volume, epoch,
                loss_cfg, train_cfg, schedule, sampler_rng, dropout_rng,
            )
            for entry in entries:
                log.write(entry.to_json() + "\n")
            log.flush()
            done = epoch + 1
            if done % train_cfg.checkpoint_every == 0 or done == train_cfg.epochs:
                save_checkpoint(
                    ckpt_path, model, logvars, done,
                    optimizer=optimizer, numpy_rng=sampler_rng, torch_rng=dropout_rng,
                    extras=ckpt_extras,
                )
    return ckpt_path

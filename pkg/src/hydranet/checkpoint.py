"""Versioned checkpoint container for model, loss weights, optimizer, and rng state.

Layout mirrors the volume container: magic ``HYDC1\\n``, a length-prefixed JSON
header (config echo, epoch counter, rng snapshots, named blob index), then the
raw parameter blobs as little-endian float32 in index order. Saving the Adam
moments and both rng streams is what makes a resumed run bit-identical to an
uninterrupted one.
"""

from __future__ import annotations

import base64
import json
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from .losses import TaskLogVariances
from .model import HydraNet, ModelConfig

CHECKPOINT_MAGIC = b"HYDC1\n"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


def _torch_gen_to_b64(gen: torch.Generator) -> str:
    return base64.b64encode(gen.get_state().numpy().tobytes()).decode("ascii")


def _torch_gen_from_b64(text: str) -> torch.Generator:
    raw = np.frombuffer(base64.b64decode(text.encode("ascii")), dtype=np.uint8).copy()
    gen = torch.Generator()
    gen.set_state(torch.from_numpy(raw))
    return gen


@dataclass
class Checkpoint:
    model_config: ModelConfig
    epoch: int
    params: dict[str, np.ndarray]
    optimizer: dict = field(default_factory=dict)
    numpy_rng_state: dict | None = None
    torch_rng_b64: str | None = None
    extras: dict = field(default_factory=dict)

    def build_model(self) -> HydraNet:
        """Reassemble the network from the config echo and parameter blobs."""
        model = HydraNet(self.model_config)
        with torch.no_grad():
            for name, param in model.named_parameters():
                key = "model." + name
                if key not in self.params:
                    raise CheckpointError(f"checkpoint missing parameter blob {key!r}")
                blob = self.params[key]
                if tuple(blob.shape) != tuple(param.shape):
                    raise CheckpointError(
                        f"blob {key!r} has shape {blob.shape}, model expects {tuple(param.shape)}"
                    )
                param.copy_(torch.from_numpy(blob))
        return model

    def build_logvars(self) -> TaskLogVariances:
        logvars = TaskLogVariances()
        key = "logvars.s"
        if key in self.params:
            with torch.no_grad():
                logvars.s.copy_(torch.from_numpy(self.params[key]))
        return logvars

    def torch_generator(self) -> torch.Generator | None:
        return _torch_gen_from_b64(self.torch_rng_b64) if self.torch_rng_b64 else None

    def numpy_generator(self) -> np.random.Generator | None:
        if self.numpy_rng_state is None:
            return None
        rng = np.random.default_rng()
        rng.bit_generator.state = self.numpy_rng_state
        return rng


def save_checkpoint(
    path,
    model: HydraNet,
    logvars: TaskLogVariances,
    epoch: int,
    optimizer: torch.optim.Optimizer | None = None,
    numpy_rng: np.random.Generator | None = None,
    torch_rng: torch.Generator | None = None,
    extras: dict | None = None,
) -> None:
    blobs: list[tuple[str, np.ndarray]] = []
    named = [("model." + n, p) for n, p in model.named_parameters()]
    named.append(("logvars.s", logvars.s))
    for name, param in named:
        blobs.append((name, param.detach().cpu().numpy().astype("<f4")))

    opt_meta: dict = {}
    if optimizer is not None:
        if not isinstance(optimizer, (torch.optim.Adam, torch.optim.SGD)):
            raise CheckpointError(f"unsupported optimizer {type(optimizer).__name__}")
        opt_meta["type"] = "adam" if isinstance(optimizer, torch.optim.Adam) else "sgd"
        opt_meta["lr"] = optimizer.param_groups[0]["lr"]
        steps = []
        params = [p for n, p in named]
        for idx, p in enumerate(params):
            state = optimizer.state.get(p, {})
            if "exp_avg" in state:
                blobs.append((f"adam.m.{idx}", state["exp_avg"].detach().cpu().numpy().astype("<f4")))
                blobs.append((f"adam.v.{idx}", state["exp_avg_sq"].detach().cpu().numpy().astype("<f4")))
                steps.append(float(state["step"]))
            else:
                steps.append(0.0)
        opt_meta["steps"] = steps

    meta = {
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "epoch": int(epoch),
        "optimizer": opt_meta,
        "rng": {
            "numpy": numpy_rng.bit_generator.state if numpy_rng is not None else None,
            "torch": _torch_gen_to_b64(torch_rng) if torch_rng is not None else None,
        },
        "extras": extras or {},
        "blobs": [{"name": name, "shape": list(arr.shape)} for name, arr in blobs],
    }
    blob = json.dumps(meta).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, arr in blobs:
            fh.write(np.ascontiguousarray(arr).tobytes(order="C"))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: bad magic bytes {magic!r}")
        (meta_len,) = struct.unpack("<Q", fh.read(8))
        raw = fh.read(meta_len)
        if len(raw) != meta_len:
            raise CheckpointError(f"{path}: truncated metadata")
        try:
            meta = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: unreadable metadata ({exc})") from exc
        payload = fh.read()
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')}")
    params: dict[str, np.ndarray] = {}
    offset = 0
    for entry in meta["blobs"]:
        shape = tuple(int(s) for s in entry["shape"])
        n_bytes = int(np.prod(shape)) * 4 if shape else 4
        chunk = payload[offset : offset + n_bytes]
        if len(chunk) != n_bytes:
            raise CheckpointError(f"{path}: truncated blob {entry['name']!r}")
        params[entry["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape).copy()
        offset += n_bytes
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} trailing payload bytes")
    rng = meta.get("rng", {})
    return Checkpoint(
        model_config=ModelConfig.from_dict(meta["model_config"]),
        epoch=int(meta["epoch"]),
        params=params,
        optimizer=meta.get("optimizer", {}),
        numpy_rng_state=rng.get("numpy"),
        torch_rng_b64=rng.get("torch"),
        extras=meta.get("extras", {}),
    )


def restore_optimizer(
    checkpoint: Checkpoint, model: HydraNet, logvars: TaskLogVariances
) -> torch.optim.Optimizer | None:
    """Rebuild the optimizer with its saved moments so training resumes exactly."""
    opt_meta = checkpoint.optimizer
    if not opt_meta:
        return None
    params = [p for _, p in model.named_parameters()] + [logvars.s]
    if opt_meta["type"] == "sgd":
        return torch.optim.SGD(params, lr=opt_meta["lr"])
    optimizer = torch.optim.Adam(params, lr=opt_meta["lr"])
    steps = opt_meta.get("steps", [])
    for idx, p in enumerate(params):
        m_key, v_key = f"adam.m.{idx}", f"adam.v.{idx}"
        if m_key in checkpoint.params:
            optimizer.state[p] = {
                "step": torch.tensor(steps[idx]),
                "exp_avg": torch.from_numpy(checkpoint.params[m_key]).clone(),
                "exp_avg_sq": torch.from_numpy(checkpoint.params[v_key]).clone(),
            }
    return optimizer

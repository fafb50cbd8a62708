"""Recurrent multi-headed U-Net over monthly conflict grids.

A shared convolutional encoder downsamples each month's grid; a convolutional
LSTM at the bottleneck (optionally at every level) carries hidden and cell
state across months; six separate decoders (three regression, three
classification) upsample with skip connections back to full resolution.
Channel-wise dropout stays active in both training and Monte-Carlo inference
modes, which is what turns repeated forward passes into posterior samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .ingest import ValidationError

MODES = ("train", "mc_inference", "deterministic")
LSTM_PLACEMENTS = ("bottleneck_only", "all_levels")


@dataclass(frozen=True)
class ModelConfig:
    levels: int = 3
    base_filters: int = 32
    kernel_size: int = 3
    dropout_rate: float = 0.15
    lstm_levels: str = "bottleneck_only"
    input_channels: int = 3
    heads: int = 6

    def __post_init__(self):
        if self.levels < 1:
            raise ValidationError(f"levels must be >= 1, got {self.levels}")
        if self.base_filters < 1:
            raise ValidationError(f"base_filters must be >= 1, got {self.base_filters}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValidationError(f"kernel_size must be odd and >= 1, got {self.kernel_size}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValidationError(f"dropout_rate must be in [0,1), got {self.dropout_rate}")
        if self.lstm_levels not in LSTM_PLACEMENTS:
            raise ValidationError(f"lstm_levels must be one of {LSTM_PLACEMENTS}")
        if self.input_channels < 1:
            raise ValidationError("input_channels must be >= 1")
        if self.heads != 6:
            raise ValidationError("the six-headed layout (3 regression + 3 classification) is fixed")

    @property
    def stride(self) -> int:
        """Total spatial downsampling factor input -> bottleneck."""
        return 2 ** (self.levels - 1)

    def level_channels(self, level: int) -> int:
        return self.base_filters * (2**level)

    def to_dict(self) -> dict:
        return {
            "levels": self.levels,
            "base_filters": self.base_filters,
            "kernel_size": self.kernel_size,
            "dropout_rate": self.dropout_rate,
            "lstm_levels": self.lstm_levels,
            "input_channels": self.input_channels,
            "heads": self.heads,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class RecurrentState:
    """Hidden (short-term) and cell (long-term) tensors, one pair per recurrent level."""

    hidden: list[Tensor]
    cell: list[Tensor]

    def detached_clone(self) -> "RecurrentState":
        return RecurrentState(
            [h.detach().clone() for h in self.hidden],
            [c.detach().clone() for c in self.cell],
        )


@dataclass
class HeadOutputs:
    """Per-month predictions: reg magnitudes >= 0 and cls probabilities in [0,1]."""

    reg: Tensor
    cls: Tensor


def _channel_dropout(x: Tensor, rate: float, stochastic: bool, generator) -> Tensor:
    """Spatial (whole-channel) dropout with an explicit generator."""
    if not stochastic or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = torch.rand(
        (x.shape[0], x.shape[1], 1, 1), generator=generator, dtype=x.dtype, device=x.device
    ) < keep
    return x * mask.to(x.dtype) / keep


class ConvLSTMCell(nn.Module):
    """LSTM cell whose gates are one shared convolution over [input; hidden]."""

    def __init__(self, input_channels: int, hidden_channels: int, kernel_size: int):
        super().__init__()
        self.hidden_channels = hidden_channels
        self.gates = nn.Conv2d(
            input_channels + hidden_channels,
            4 * hidden_channels,
            kernel_size,
            padding=kernel_size // 2,
        )

    def forward(self, x: Tensor, hidden: Tensor, cell: Tensor) -> tuple[Tensor, Tensor]:
        i, f, g, o = self.gates(torch.cat([x, hidden], dim=1)).chunk(4, dim=1)
        new_cell = torch.sigmoid(f) * cell + torch.sigmoid(i) * torch.tanh(g)
        new_hidden = torch.sigmoid(o) * torch.tanh(new_cell)
        return new_hidden, new_cell


class _DecoderHead(nn.Module):
    """One output head: mirrored upsampling path with skip fusion and a 1x1 readout."""

    def __init__(self, config: ModelConfig, kind: str):
        super().__init__()
        assert kind in ("regression", "classification")
        self.kind = kind
        self.config = config
        self.up_convs = nn.ModuleList()
        self.fuse_convs = nn.ModuleList()
        k, pad = config.kernel_size, config.kernel_size // 2
        for level in range(config.levels - 2, -1, -1):
            ch = config.level_channels(level)
            self.up_convs.append(nn.Conv2d(config.level_channels(level + 1), ch, k, padding=pad))
            self.fuse_convs.append(nn.Conv2d(2 * ch, ch, k, padding=pad))
        self.readout = nn.Conv2d(config.level_channels(0), 1, kernel_size=1)

    def forward(self, x: Tensor, skips: list[Tensor], stochastic: bool, generator) -> Tensor:
        rate = self.config.dropout_rate
        for i, level in enumerate(range(self.config.levels - 2, -1, -1)):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = _channel_dropout(F.relu(self.up_convs[i](x)), rate, stochastic, generator)
            x = torch.cat([x, skips[level]], dim=1)
            x = _channel_dropout(F.relu(self.fuse_convs[i](x)), rate, stochastic, generator)
        out = self.readout(x)
        if self.kind == "classification":
            return torch.sigmoid(out)
        return F.softplus(out)


class HydraNet(nn.Module):
    """Shared recurrent encoder, six decoders; processes one month per step."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        k, pad = config.kernel_size, config.kernel_size // 2
        self.enc_a = nn.ModuleList()
        self.enc_b = nn.ModuleList()
        self.down = nn.ModuleList()
        for level in range(config.levels):
            ch = config.level_channels(level)
            in_ch = config.input_channels if level == 0 else ch
            self.enc_a.append(nn.Conv2d(in_ch, ch, k, padding=pad))
            self.enc_b.append(nn.Conv2d(ch, ch, k, padding=pad))
            if level < config.levels - 1:
                self.down.append(nn.Conv2d(ch, config.level_channels(level + 1), k, stride=2, padding=pad))
        if config.lstm_levels == "all_levels":
            self.recurrent_levels = tuple(range(config.levels))
        else:
            self.recurrent_levels = (config.levels - 1,)
        self.lstm_cells = nn.ModuleList(
            ConvLSTMCell(config.level_channels(lv), config.level_channels(lv), k)
            for lv in self.recurrent_levels
        )
        self.decoders = nn.ModuleList(
            [_DecoderHead(config, "regression") for _ in range(3)]
            + [_DecoderHead(config, "classification") for _ in range(3)]
        )

    # -- initialization ------------------------------------------------------

    def reset_parameters(self, generator: torch.Generator) -> None:
        """Fan-in-scaled uniform conv weights, zero biases, forget-gate bias +1."""
        for module in self.modules():
            if isinstance(module, nn.Conv2d):
                fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
                bound = math.sqrt(6.0 / fan_in)
                with torch.no_grad():
                    module.weight.copy_(
                        (torch.rand(module.weight.shape, generator=generator) * 2.0 - 1.0) * bound
                    )
                    if module.bias is not None:
                        module.bias.zero_()
        for cell in self.lstm_cells:
            hc = cell.hidden_channels
            with torch.no_grad():
                cell.gates.bias[hc : 2 * hc].fill_(1.0)

    # -- state ---------------------------------------------------------------

    def _check_spatial(self, h: int, w: int) -> None:
        s = self.config.stride
        if h <= 0 or w <= 0 or h % s or w % s:
            raise ValidationError(
                f"spatial size {h}x{w} must be positive and divisible by the "
                f"downsampling stride {s}"
            )

    def init_state(self, batch: int, spatial: tuple[int, int]) -> RecurrentState:
        """All-zero hidden and cell tensors for a fresh sequence."""
        h, w = spatial
        self._check_spatial(h, w)
        dtype = next(self.parameters()).dtype
        hidden, cell = [], []
        for lv in self.recurrent_levels:
            shape = (batch, self.config.level_channels(lv), h // 2**lv, w // 2**lv)
            hidden.append(torch.zeros(shape, dtype=dtype))
            cell.append(torch.zeros(shape, dtype=dtype))
        return RecurrentState(hidden, cell)

    def _check_state(self, x: Tensor, state: RecurrentState) -> None:
        n = len(self.recurrent_levels)
        if len(state.hidden) != n or len(state.cell) != n:
            raise ValidationError(
                f"state carries {len(state.hidden)} levels, model has {n} recurrent levels"
            )
        b, _, h, w = x.shape
        for idx, lv in enumerate(self.recurrent_levels):
            expect = (b, self.config.level_channels(lv), h // 2**lv, w // 2**lv)
            for part, tensor in (("hidden", state.hidden[idx]), ("cell", state.cell[idx])):
                if tuple(tensor.shape) != expect:
                    raise ValidationError(
                        f"{part} state at level {lv} has shape {tuple(tensor.shape)}, expected {expect}"
                    )

    # -- forward -------------------------------------------------------------

    def _skip_tensor(self, t: Tensor) -> Tensor:
        # seam for wiring tests; identity in production
        return t

    def step(
        self,
        x: Tensor,
        state: RecurrentState,
        mode: str,
        generator: torch.Generator | None = None,
    ) -> tuple[HeadOutputs, RecurrentState]:
        """Ingest one month, emit six head maps and the advanced state."""
        if mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")
        if x.ndim != 4 or x.shape[1] != self.config.input_channels:
            raise ValidationError(
                f"input must be [B,{self.config.input_channels},H,W], got {tuple(x.shape)}"
            )
        if not torch.isfinite(x).all():
            raise ValidationError("step input contains non-finite values")
        self._check_spatial(x.shape[2], x.shape[3])
        self._check_state(x, state)
        stochastic = mode != "deterministic"
        if stochastic and self.config.dropout_rate > 0.0 and generator is None:
            raise ValidationError(f"mode={mode!r} with active dropout needs an explicit generator")

        rate = self.config.dropout_rate
        skips: list[Tensor] = []
        new_hidden: list[Tensor] = []
        new_cell: list[Tensor] = []
        feat = x
        recurrent_index = 0
        for level in range(self.config.levels):
            if level > 0:
                feat = F.relu(self.down[level - 1](feat))
            feat = _channel_dropout(F.relu(self.enc_a[level](feat)), rate, stochastic, generator)
            feat = _channel_dropout(F.relu(self.enc_b[level](feat)), rate, stochastic, generator)
            if level in self.recurrent_levels:
                h, c = self.lstm_cells[recurrent_index](
                    feat, state.hidden[recurrent_index], state.cell[recurrent_index]
                )
                new_hidden.append(h)
                new_cell.append(c)
                feat = h
                recurrent_index += 1
            if level < self.config.levels - 1:
                skips.append(self._skip_tensor(feat))
        bottleneck = feat
        maps = [dec(bottleneck, skips, stochastic, generator) for dec in self.decoders]
        outputs = HeadOutputs(reg=torch.cat(maps[:3], dim=1), cls=torch.cat(maps[3:], dim=1))
        return outputs, RecurrentState(new_hidden, new_cell)

    def forward_sequence(
        self,
        inputs: Tensor,
        initial_state: RecurrentState,
        mode: str,
        generator: torch.Generator | None = None,
    ) -> tuple[list[HeadOutputs], RecurrentState]:
        """Left fold of step over a [T,B,C,H,W] sequence (teacher forcing).

        outputs[t] is the prediction for month t+1, made after ingesting month t.
        """
        if inputs.ndim != 5 or inputs.shape[0] < 1:
            raise ValidationError(f"inputs must be [T>=1,B,C,H,W], got {tuple(inputs.shape)}")
        state = initial_state
        outputs: list[HeadOutputs] = []
        for t in range(inputs.shape[0]):
            out, state = self.step(inputs[t], state, mode, generator)
            outputs.append(out)
        return outputs, state


def init_model(config: ModelConfig, rng: int | torch.Generator) -> HydraNet:
    """Build and deterministically initialize a model from a seed or generator."""
    generator = rng if isinstance(rng, torch.Generator) else torch.Generator().manual_seed(int(rng))
    model = HydraNet(config)
    model.reset_parameters(generator)
    return model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())

"""Structured run configuration: INI-style sections, schema validation, env overrides.

Every key has a default from its owning module, so an empty config is a valid
config. Unknown sections or keys are errors, reported exhaustively. Values may
be overridden by environment variables named ``HYDRANET_<SECTION>__<KEY>``
with dots spelled as double underscores (e.g. ``HYDRANET_TRAIN__CURRICULUM__P_START``).
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass

from .ingest import GridSpec, PartitionScheme, ValidationError
from .losses import LossConfig
from .model import LSTM_PLACEMENTS, ModelConfig
from .sampling import CurriculumSchedule
from .training import OPTIMIZERS, TrainConfig

ENV_PREFIX = "HYDRANET_"


class ConfigError(ValueError):
    """One or more configuration problems; ``problems`` lists them all."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_month0(text: str) -> tuple[int, int]:
    year, _, month = text.partition("-")
    return int(year), int(month)


def _parse_floats(text: str) -> tuple[float, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(float(tok) for tok in text.split(","))


def _parse_opt_int(text: str):
    text = text.strip()
    return None if text in ("", "auto") else int(text)


_PARSERS = {
    "int": int,
    "float": float,
    "str": str,
    "bool": _parse_bool,
    "month0": _parse_month0,
    "floats": _parse_floats,
    "opt_int": _parse_opt_int,
}


@dataclass(frozen=True)
class _Key:
    type: str
    default: object
    help: str
    choices: tuple[str, ...] | None = None


SCHEMA: dict[str, dict[str, _Key]] = {
    "data": {
        "height": _Key("int", 180, "grid rows"),
        "width": _Key("int", 180, "grid columns"),
        "cell_size_deg": _Key("float", 0.5, "decimal degrees per cell side"),
        "origin_lat": _Key("float", 40.0, "latitude of cell (0,0) corner"),
        "origin_lon": _Key("float", -19.0, "longitude of cell (0,0) corner"),
        "month0": _Key("month0", (1990, 1), "calendar anchor of month_id 0, as YYYY-MM"),
        "row_order": _Key("str", "north_first", "row 0 orientation", ("north_first", "south_first")),
        "partition": _Key(
            "str", "custom", "partition preset", ("calibration", "validation", "custom")
        ),
        "first_month_id": _Key("opt_int", None, "custom partition start (default: volume start)"),
        "last_month_id": _Key("opt_int", None, "custom partition end (default: volume end)"),
        "test_months": _Key("int", 36, "trailing hold-out months"),
    },
    "model": {
        "levels": _Key("int", 3, "U-Net depth"),
        "base_filters": _Key("int", 32, "filters at full resolution (doubled per level)"),
        "kernel_size": _Key("int", 3, "conv kernel side (odd)"),
        "dropout_rate": _Key("float", 0.15, "channel dropout rate, active at inference"),
        "lstm_levels": _Key("str", "bottleneck_only", "recurrence placement", LSTM_PLACEMENTS),
        "input_channels": _Key("int", 3, "input channels"),
        "heads": _Key("int", 6, "output heads (fixed six)"),
    },
    "loss": {
        "focal_alpha": _Key("float", 0.25, "focal positive-class weight"),
        "focal_gamma": _Key("float", 2.0, "focal modulation exponent"),
        "shrink_a": _Key("float", 10.0, "shrinkage steepness"),
        "shrink_c": _Key("float", 0.2, "shrinkage residual threshold"),
        "shrink_weighted": _Key("bool", False, "scale shrinkage by exp(target)"),
        "eps": _Key("float", 1e-7, "probability clamp"),
    },
    "train": {
        "seed": _Key("int", 0, "training seed (mandatory determinism; never wall-clock)"),
        "epochs": _Key("int", 100, "training epochs"),
        "batches_per_epoch": _Key("int", 32, "gradient steps per epoch"),
        "batch_size": _Key("int", 4, "patches per step"),
        "learning_rate": _Key("float", 1e-3, "optimizer learning rate"),
        "optimizer": _Key("str", "adam_like", "optimizer kind", OPTIMIZERS),
        "checkpoint_every": _Key("int", 25, "checkpoint period in epochs"),
        "grad_clip": _Key("float", 5.0, "global gradient-norm clip"),
        "patch_size": _Key("int", 32, "spatial patch side"),
        "curriculum.p_start": _Key("float", 0.95, "violence-biased sampling probability at epoch 0"),
        "curriculum.p_end": _Key("float", 0.50, "biased probability after the ramp"),
        "curriculum.ramp_epochs": _Key("opt_int", None, "ramp length (default: epochs)"),
    },
    "forecast": {
        "horizon": _Key("int", 36, "forecast months"),
        "samples": _Key("int", 128, "posterior samples"),
        "seed": _Key("int", 0, "rollout seed"),
    },
    "eval": {
        "quantiles": _Key("floats", (0.05, 0.95), "summary quantiles, comma-separated"),
    },
}


@dataclass
class RunConfig:
    """Typed view of one validated configuration document."""

    values: dict[str, dict[str, object]]

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    @property
    def grid(self) -> GridSpec:
        d = self.values["data"]
        return GridSpec(
            height=d["height"],
            width=d["width"],
            cell_size_deg=d["cell_size_deg"],
            origin_lat=d["origin_lat"],
            origin_lon=d["origin_lon"],
            month0=d["month0"],
            row_order=d["row_order"],
        )

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(**self.values["model"])

    @property
    def loss(self) -> LossConfig:
        return LossConfig(**self.values["loss"])

    @property
    def train(self) -> TrainConfig:
        t = self.values["train"]
        return TrainConfig(
            seed=t["seed"],
            epochs=t["epochs"],
            batches_per_epoch=t["batches_per_epoch"],
            batch_size=t["batch_size"],
            learning_rate=t["learning_rate"],
            optimizer=t["optimizer"],
            checkpoint_every=t["checkpoint_every"],
            grad_clip=t["grad_clip"],
            patch_size=t["patch_size"],
        )

    @property
    def schedule(self) -> CurriculumSchedule:
        t = self.values["train"]
        ramp = t["curriculum.ramp_epochs"]
        return CurriculumSchedule(
            p_start=t["curriculum.p_start"],
            p_end=t["curriculum.p_end"],
            ramp_epochs=t["epochs"] if ramp is None else ramp,
        )

    def partition_for(self, month_ids: list[int]) -> PartitionScheme:
        """Resolve the configured partition against a concrete volume span."""
        d = self.values["data"]
        name = d["partition"]
        if name == "calibration":
            return PartitionScheme.calibration()
        if name == "validation":
            return PartitionScheme.validation()
        first = d["first_month_id"] if d["first_month_id"] is not None else month_ids[0]
        last = d["last_month_id"] if d["last_month_id"] is not None else month_ids[-1]
        return PartitionScheme("custom", first, last, d["test_months"])


def default_config() -> RunConfig:
    return RunConfig(
        {section: {key: spec.default for key, spec in keys.items()} for section, keys in SCHEMA.items()}
    )


def _env_overrides(env: dict[str, str]) -> list[tuple[str, str, str]]:
    found = []
    for name, value in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX) :]
        section, sep, key = rest.partition("__")
        if not sep:
            continue
        found.append((section.lower(), key.replace("__", ".").lower(), value))
    return sorted(found)


def load_run_config(
    path=None,
    env: dict[str, str] | None = None,
    overrides: list[tuple[str, str, str]] | None = None,
) -> RunConfig:
    """Defaults, then config file, then environment, then explicit overrides.

    All schema violations are collected and raised together as ConfigError.
    """
    values = {s: dict(keys) for s, keys in default_config().values.items()}
    problems: list[str] = []
    pending: list[tuple[str, str, str, str]] = []

    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError([f"{path}: cannot parse config ({exc})"]) from exc
        for section in parser.sections():
            for key, raw in parser.items(section):
                pending.append((section.lower(), key.lower(), raw, f"{path} [{section}] {key}"))

    for section, key, raw in _env_overrides(env if env is not None else dict(os.environ)):
        pending.append((section, key, raw, f"env {ENV_PREFIX}{section.upper()}__{key.upper()}"))

    for section, key, raw in overrides or []:
        pending.append((section.lower(), key.lower(), raw, f"override {section}.{key}"))

    for section, key, raw, origin in pending:
        if section not in SCHEMA:
            problems.append(f"{origin}: unknown section [{section}]")
            continue
        if key not in SCHEMA[section]:
            problems.append(f"{origin}: unknown key {key!r} in section [{section}]")
            continue
        spec = SCHEMA[section][key]
        try:
            value = _PARSERS[spec.type](raw)
        except (ValueError, TypeError) as exc:
            problems.append(f"{origin}: cannot parse {raw!r} as {spec.type} ({exc})")
            continue
        if spec.choices and value not in spec.choices:
            problems.append(f"{origin}: {value!r} not in {spec.choices}")
            continue
        values[section][key] = value

    config = RunConfig(values)
    # construct every typed view now so invariant violations surface here too
    for build in ("grid", "model", "loss", "train", "schedule"):
        try:
            getattr(config, build)
        except (ValidationError, ValueError) as exc:
            problems.append(str(exc))
    if problems:
        raise ConfigError(problems)
    return config


def schema_help() -> str:
    """One line per config key with its default — the --help doc-drift guard."""
    lines = ["configuration keys (section.key = default):"]
    for section, keys in SCHEMA.items():
        for key, spec in keys.items():
            default = spec.default
            if spec.type == "month0":
                default = f"{default[0]}-{default[1]:02d}"
            elif spec.type == "floats":
                default = ",".join(str(v) for v in default)
            elif default is None:
                default = "auto"
            lines.append(f"  {section}.{key} = {default}  ({spec.help})")
    lines.append(f"environment overrides: {ENV_PREFIX}<SECTION>__<KEY> (dots spelled as __)")
    return "\n".join(lines)

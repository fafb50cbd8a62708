"""Spatiotemporal conflict-grid forecasting toolkit.

Tensorizes grid-month event tables into z-stack volumes, trains a multi-headed
recurrent U-Net on curriculum-sampled patches, rolls out Monte-Carlo-dropout
posterior forecasts with a frozen long-term memory, and scores them against a
no-change baseline.
"""

__version__ = "0.1.0"

from .evaluation import (
    EvalReport,
    RegionMask,
    average_precision,
    brier,
    evaluate_forecast,
    mse,
    no_change_baseline,
    roc_auc,
)
from .forecasting import (
    ForecastCube,
    ForecastSummary,
    forecast_posterior,
    read_cube,
    rollout_one_sample,
    summarize,
    warmup,
    write_cube,
)
from .ingest import (
    EventRecord,
    GridSpec,
    PartitionScheme,
    ValidationError,
    ZStackVolume,
    binarize,
    build_volume,
    deserialize_volume,
    log_magnitude,
    partition,
    read_events,
    serialize_volume,
    write_events,
)
from .losses import (
    HEAD_NAMES,
    LossConfig,
    TaskLogVariances,
    focal_loss,
    multitask_combine,
    shrinkage_loss,
)
from .model import (
    HeadOutputs,
    HydraNet,
    ModelConfig,
    RecurrentState,
    count_parameters,
    init_model,
)
from .sampling import CurriculumSchedule, PatchSequence, curriculum_probability, make_batch, sample_patch
from .synthetic import SynthSpec, generate_events, generate_volume
from .training import TrainConfig, TrainLogEntry, compute_targets, fit, train_epoch

"""Neural-operator surrogates for multiphase CO2/brine flow, with a toy
radial reservoir simulator, training harness, and CLI."""

from .batching import BatchSpec, EpochSampler
from .fields import gen_random_fields
from .gcsd import read_dataset, write_dataset
from .layers import count_params
from .losses import LossSpec, lp_loss, mae, r2
from .models import (
    FourierMIONet,
    FourierMIONetConfig,
    UFNO2d,
    UFNOConfig,
    VanillaMIONet,
    MIONetConfig,
    mionet_forward,
    paper_dp_config,
    paper_sg_config,
)
from .optim import Adam
from .records import FieldMaps, Normalizer, SampleRecord, ScalarParams, build_mask
from .schedule import FULL_SCHEDULE_DAYS, SnapshotSchedule, snapshot_schedule
from .simulator import GridSpec, simulate_case
from .tensor import Tensor, no_grad
from .training import (
    ExperimentConfig,
    MetricsReport,
    evaluate_unseen_time,
    lr_schedule,
    run_nonuniform_suite,
    train,
)

__version__ = "0.1.0"

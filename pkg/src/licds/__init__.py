"""Local-model trajectory encoding and an encoding-length score for dynamics models."""

from .systems import DynamicsFn, SystemSpec, SYSTEM_NAMES, get_system
from .integrate import BlowUpError, Trajectory, integrate, sample_em
from .localmodel import LocalModel, MonomialBasis, TaylorFitError, basis_size, taylor_fit
from .core import (
    LicdsError,
    LicdsParams,
    LicdsResult,
    PartitionResult,
    calibrate_lambda,
    check_l2_bound,
    check_l1_distances,
    licds,
    lms,
    local_cost,
    rank_models,
    score_model,
)
from .learn import Dataset, GpModel, MlpModel, fit_gp, load_model, make_dataset, train_mlp
from .codec import EncodedMessage, QuantizationSpec, decode, encode

__version__ = "0.1.0"

"""Sliced iterative normalizing flows.

Flows are built greedily: each layer finds the K orthonormal axes along
which two sample sets differ most (max K-sliced Wasserstein distance),
then matches the 1D marginals along those axes with monotone splines.
"""

from .errors import (
    DegenerateMarginalError,
    DimensionMismatchError,
    FormatError,
    InvalidDataError,
    LengthMismatchError,
    SinfError,
    StepTooLargeError,
)
from .flow import Flow, LogDensityReport, LogitTransform, PatchLayer, SinfLayer
from .io import load_dataset, load_model, save_model
from .metrics import OodReport, auroc
from .patching import PatchSchedule, PatchStage, default_schedule, make_layout
from .sliced import (
    LineSearchConfig,
    cayley_retract_full,
    cayley_retract_woodbury,
    kswd_cost,
    max_k_swd,
    max_k_swd_multistart,
    max_sliced_wasserstein,
    sliced_wasserstein,
    wasserstein_1d,
)
from .spline import RegularizedMap, RQSpline
from .training import KdeConfig, TrainConfig, TrainReport, small_data_presets, train_gis, train_sig

__version__ = "0.1.0"

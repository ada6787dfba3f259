"""velsurf: velocity-surface reconstruction from sparse velocimetry records.

Builds a 2-D velocity surface over (time x thickness) from a handful of
experimental time series using epsilon-support-vector regression, with the
full preprocessing, hyperparameter-selection, gap-filling, and outlier
flagging pipeline behind both a library API and the ``velsurf`` CLI.
"""

from .data_model import (
    DataPoint,
    ExperimentSeries,
    RawDataset,
    ValidationIssue,
    ValidationReport,
    load_dataset,
    parse_experiment_file,
    serialize_experiment,
    validate_dataset,
)
from .errors import (
    DataError,
    ModelChecksumError,
    ModelFormatError,
    ModelVersionError,
    NumericalError,
    VelsurfError,
)
from .kernels import (
    AnisotropicRbfKernel,
    Kernel,
    PolynomialKernel,
    RbfKernel,
    gram_matrix,
    kernel_eval,
)
from .model_selection import (
    CvResult,
    ErrorTable,
    FoldPlan,
    cross_validate,
    grid_search,
    l2_error,
    make_folds,
)
from .preprocess import (
    AlignedDataset,
    AxisScaler,
    ScaledDataset,
    align_and_truncate,
    detect_start_time,
    load_scaled_dataset,
    preprocess_dataset,
    save_scaled_dataset,
    scale_to_unit_grid,
    smooth_triangular,
)
from .solver import (
    DualSolution,
    SolverConfig,
    dual_objective,
    kkt_violation,
    solve_epsilon_svr,
    solve_qp_reference,
)
from .surface import (
    OutlierEntry,
    OutlierReport,
    SurfaceGrid,
    flag_outliers,
    outlier_score,
    reconstruct_surface,
    score_experiments,
    score_experiments_loo,
)
from .svr import (
    HyperParams,
    SvrModel,
    TrainingMeta,
    load_model,
    predict_physical,
    predict_scaled,
    save_model,
    train,
)
from .synthgen import SynthConfig, generate_dataset, generate_profile, profile_value

__version__ = "0.1.0"
FORMAT_VERSION = 1

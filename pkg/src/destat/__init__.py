"""Non-stationary transformer forecasting with de-stationary attention.

The package trains an encoder-decoder transformer on multivariate time
series whose level and scale drift over time.  Input windows are
z-normalized before entering the network, predictions are denormalized on
the way out, and the attention kernel is rescaled and shifted by learned
per-window factors so that information removed by the normalization stays
visible to the attention maps.
"""

from .attention import (
    ATTENTION_MODES,
    FACTOR_PAIRINGS,
    AttentionConfig,
    DestatFactors,
    FactorProjector,
    causal_mask,
    destationary_attention,
    multi_head_destat,
    project_factors,
)
from .autodiff import (
    ParameterSet,
    Tensor,
    layer_norm,
    mae_loss,
    mse_loss,
    no_grad,
    reduce_mean_std,
    softmax_rows,
)
from .config import (
    CONFIG_VERSION,
    DataConfig,
    RunConfig,
    apply_override,
    config_mapping,
    dump_config,
    load_dataset,
    load_run_config,
    parse_run_config,
)
from .data import (
    MISSING_POLICIES,
    SYNTHETIC_KINDS,
    Dataset,
    SeriesWindow,
    SplitSpec,
    SyntheticSpec,
    generate_synthetic,
    load_csv,
    make_windows,
    save_csv,
    stack_windows,
)
from .errors import (
    AssumptionViolationError,
    CheckpointError,
    ConfigurationError,
    DataValidationError,
    DegenerateSeriesError,
    DestatError,
    EmptyWindowError,
    ModelExecutionError,
    NumericalError,
    ShapeMismatchError,
    TrainingDivergenceError,
)
from .estimator import NonstationaryTransformerForecaster
from .gradcheck import check_gradients, numeric_gradient, relative_error
from .metrics import (
    AdfResult,
    EvalReport,
    adf_statistic,
    mae,
    mse,
    relative_stationarity,
    schwert_lag,
)
from .model import (
    MODEL_MODES,
    ModelConfig,
    ModelOutput,
    NSTransformer,
    build_decoder_input,
    load_checkpoint,
    save_checkpoint,
    sinusoidal_encoding,
)
from .oracle import (
    OracleReport,
    generate_instance,
    multilayer_identity_check,
    raw_attention_map,
    reconstructed_attention_map,
    run_verification,
)
from .stationarization import (
    DEFAULT_EPSILON,
    DENORM_MODES,
    ForecastBatch,
    SeriesStationarizer,
    StationaryStats,
    compute_stats,
    denormalize,
    normalize,
    wrap_model,
)
from .training import (
    Adam,
    TrainConfig,
    TrainResult,
    evaluate,
    predict_windows,
    train,
    write_history_csv,
)

__version__ = "0.1.0"

__all__ = [
    "ATTENTION_MODES",
    "Adam",
    "AdfResult",
    "AssumptionViolationError",
    "AttentionConfig",
    "CONFIG_VERSION",
    "CheckpointError",
    "ConfigurationError",
    "DEFAULT_EPSILON",
    "DENORM_MODES",
    "DataConfig",
    "DataValidationError",
    "Dataset",
    "DegenerateSeriesError",
    "DestatError",
    "DestatFactors",
    "EmptyWindowError",
    "EvalReport",
    "FACTOR_PAIRINGS",
    "FactorProjector",
    "ForecastBatch",
    "MISSING_POLICIES",
    "MODEL_MODES",
    "ModelConfig",
    "ModelExecutionError",
    "ModelOutput",
    "NSTransformer",
    "NonstationaryTransformerForecaster",
    "NumericalError",
    "OracleReport",
    "ParameterSet",
    "RunConfig",
    "SYNTHETIC_KINDS",
    "SeriesStationarizer",
    "SeriesWindow",
    "ShapeMismatchError",
    "SplitSpec",
    "StationaryStats",
    "SyntheticSpec",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergenceError",
    "adf_statistic",
    "apply_override",
    "build_decoder_input",
    "causal_mask",
    "check_gradients",
    "compute_stats",
    "config_mapping",
    "denormalize",
    "destationary_attention",
    "dump_config",
    "evaluate",
    "generate_instance",
    "generate_synthetic",
    "layer_norm",
    "load_checkpoint",
    "load_csv",
    "load_dataset",
    "load_run_config",
    "mae",
    "mae_loss",
    "make_windows",
    "mse",
    "mse_loss",
    "multi_head_destat",
    "multilayer_identity_check",
    "no_grad",
    "normalize",
    "numeric_gradient",
    "parse_run_config",
    "predict_windows",
    "project_factors",
    "raw_attention_map",
    "reconstructed_attention_map",
    "reduce_mean_std",
    "relative_error",
    "relative_stationarity",
    "run_verification",
    "save_checkpoint",
    "save_csv",
    "schwert_lag",
    "sinusoidal_encoding",
    "softmax_rows",
    "stack_windows",
    "train",
    "wrap_model",
    "write_history_csv",
]

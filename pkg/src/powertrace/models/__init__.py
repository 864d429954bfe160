"""The four predictors (LSTM, TCN, Transformer, random forest) with training,
inference, compute accounting, and checkpoint I/O."""

from .base import RunContext
from .forest import (
    Forest,
    RfConfig,
    flatten_windows,
    rf_feature_importance,
    rf_fit,
    rf_per_tree,
    rf_predict,
    rf_std_per_point,
)
from .lstm import Lstm, LstmConfig, build_lstm
from .tcn import Tcn, TcnConfig, build_tcn
from .training import (
    MODEL_KINDS,
    NEURAL_KINDS,
    TrainConfig,
    TrainedModel,
    build_model,
    config_class,
    config_from_dict,
    count_parameters,
    estimate_flops,
    fit_forest,
    load_model,
    predict,
    save_model,
    train,
)
from .transformer import Transformer, TransformerConfig, build_transformer, sinusoidal_encoding

__all__ = [
    "Forest",
    "Lstm",
    "LstmConfig",
    "MODEL_KINDS",
    "NEURAL_KINDS",
    "RfConfig",
    "RunContext",
    "Tcn",
    "TcnConfig",
    "TrainConfig",
    "TrainedModel",
    "Transformer",
    "TransformerConfig",
    "build_lstm",
    "build_model",
    "build_tcn",
    "build_transformer",
    "config_class",
    "config_from_dict",
    "count_parameters",
    "estimate_flops",
    "fit_forest",
    "flatten_windows",
    "load_model",
    "predict",
    "rf_feature_importance",
    "rf_fit",
    "rf_per_tree",
    "rf_predict",
    "rf_std_per_point",
    "save_model",
    "sinusoidal_encoding",
    "train",
]

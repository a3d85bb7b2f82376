"""Lightweight spatio-temporal graph GRU forecaster.

A learnable sparse graph (Binary-Concrete sampling over embedding-derived
edge probabilities) feeds a graph convolution whose output drives a
memory-augmented, gated recurrence; built on a small numpy-backed
reverse-mode gradient engine so every gradient is checkable against finite
differences.
"""

from .config import ModelConfig, SyntheticSpec, TrainConfig
from .data import SeriesTensor, generate_synthetic, load_series, save_series
from .errors import (
    ConfigError,
    DataFormatError,
    DivergenceError,
    DomainError,
    OracleError,
    ShapeError,
)
from .gradcheck import run_gradient_check
from .graph import (
    AdjacencySample,
    edge_probabilities,
    gcn_forward,
    normalize_adjacency,
    sample_adjacency,
)
from .kernel import Tensor, backward, finite_difference_gradient, gradient_of_scalar
from .metrics import CostReport, MetricsReport, build_cost_report, compute_metrics
from .model import (
    ParameterStore,
    cell_step,
    forecast,
    gru_update,
    init_params,
    loss,
    maa_forward,
    project_input,
)
from .baselines import baseline_forward, persistence_forecast
from .training import (
    Normalizer,
    TrainResult,
    adam_step,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    split_dataset,
    train,
    windowize,
)

__version__ = "0.1.0"

"""Configuration dataclasses for the model, the trainer, and synthetic data."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError

ATTENTION_AXES = ("feature", "node")
HIDDEN_INITS = ("zeros", "gaussian")
PRECISIONS = ("f64", "f32")
SPLIT_ORDERS = ("train_test_val", "train_val_test")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``window`` is the number of observed steps fed to the recurrence and
    ``horizon`` the number of future steps predicted.
    """

    n_nodes: int
    window: int = 12
    horizon: int = 12
    in_channels: int = 1
    hidden_dim: int = 64
    embed_dim: int = 10
    tau: float = 0.5
    use_gumbel: bool = True
    use_maa: bool = True
    attention_axis: str = "feature"
    hidden_init: str = "zeros"
    hidden_init_sigma: float = 1.0
    precision: str = "f64"

    def validate(self) -> "ModelConfig":
        if self.n_nodes < 1:
            raise ConfigError(f"n_nodes must be >= 1, got {self.n_nodes}")
        if self.window < 1 or self.horizon < 1:
            raise ConfigError(
                f"window and horizon must be >= 1, got {self.window}, {self.horizon}"
            )
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.attention_axis not in ATTENTION_AXES:
            raise ConfigError(f"attention_axis must be one of {ATTENTION_AXES}")
        if self.hidden_init not in HIDDEN_INITS:
            raise ConfigError(f"hidden_init must be one of {HIDDEN_INITS}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {PRECISIONS}")
        return self

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(np.float64 if self.precision == "f64" else np.float32)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; learning rate and batch size follow the defaults
    the architecture was tuned with."""

    learning_rate: float = 0.001
    batch_size: int = 16
    epochs: int = 50
    seed: int = 0
    split_ratio: tuple[float, float, float] = (0.6, 0.2, 0.2)
    patience: int = 10
    clip_norm: float = 5.0
    split_order: str = "train_test_val"

    def validate(self) -> "TrainConfig":
        if abs(sum(self.split_ratio) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must sum to 1, got {self.split_ratio}")
        if any(r < 0 for r in self.split_ratio):
            raise ConfigError(f"split ratios must be nonnegative, got {self.split_ratio}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.split_order not in SPLIT_ORDERS:
            raise ConfigError(f"split_order must be one of {SPLIT_ORDERS}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings for the desk-scale synthetic benchmark.

    Each node carries a sum of sinusoids (one random phase per node and
    period) that drives a graph-diffusion recurrence; ``alpha`` is the
    diffusion coefficient and ``noise`` the per-step Gaussian sigma.
    """

    n_nodes: int = 20
    n_steps: int = 2400
    graph_seed: int = 7
    signal_seed: int = 11
    alpha: float = 0.3
    noise: float = 0.5
    periods: tuple[int, ...] = (16, 96)
    avg_degree: float = 3.0

    def validate(self) -> "SyntheticSpec":
        if self.n_nodes < 2:
            raise ConfigError(f"n_nodes must be >= 2, got {self.n_nodes}")
        if self.n_steps < 2:
            raise ConfigError(f"n_steps must be >= 2, got {self.n_steps}")
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.noise < 0:
            raise ConfigError(f"noise must be nonnegative, got {self.noise}")
        if not self.periods or any(p < 2 for p in self.periods):
            raise ConfigError(f"periods must all be >= 2, got {self.periods}")
        if self.avg_degree <= 0:
            raise ConfigError(f"avg_degree must be positive, got {self.avg_degree}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

"""End-to-end gradient verification: reverse-mode gradients of the forecast
loss against the central finite-difference oracle, on a frozen-noise toy
model where both are cheap and 64-bit exact arithmetic applies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernel
from .baselines import baseline_forward, init_baseline_params, resolve_config
from .config import ModelConfig
from .model import ParameterStore, loss as forecast_loss

Array = np.ndarray

TOY_CONFIG = dict(
    n_nodes=5,
    embed_dim=3,
    hidden_dim=8,
    window=6,
    horizon=4,
    in_channels=1,
    precision="f64",
)
DEFAULT_EPS = 1e-5
DEFAULT_TOLERANCE = 1e-4


@dataclass(frozen=True)
class GradCheckResult:
    kind: str
    errors: dict[str, float]
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def toy_config(**overrides) -> ModelConfig:
    merged = {**TOY_CONFIG, **overrides}
    return ModelConfig(**merged).validate()


def _loss_fn(kind: str, cfg: ModelConfig, window: Array, target: Array, noise):
    """Deterministic scalar loss as a function of raw parameter arrays."""
    template = init_baseline_params(kind, cfg, np.random.default_rng(0))

    def f(arrays) -> float:
        store = ParameterStore()
        for name in template:
            store.add(name, np.asarray(arrays[name], dtype=np.float64))
        y_hat = baseline_forward(window, kind, store, cfg, mode="relaxed", noise=noise)
        return forecast_loss(y_hat, target).item()

    return f


def run_gradient_check(
    kind: str = "stlgru",
    seed: int = 0,
    eps: float = DEFAULT_EPS,
    tolerance: float = DEFAULT_TOLERANCE,
    cfg: ModelConfig | None = None,
) -> GradCheckResult:
    """Compare reverse-mode and finite-difference gradients for every
    parameter tensor of ``kind`` on one frozen-noise window.

    Relative error per tensor is ||g_a - g_n||_inf / max(1, ||g_n||_inf).
    """
    cfg = toy_config() if cfg is None else cfg
    cfg = resolve_config(kind, cfg)
    rng = np.random.default_rng(seed)
    window = rng.standard_normal((cfg.window, cfg.n_nodes, cfg.in_channels))
    target = rng.standard_normal((cfg.n_nodes, cfg.horizon))
    noise = (
        rng.gumbel(0.0, 1.0, size=(cfg.n_nodes, cfg.n_nodes)),
        rng.gumbel(0.0, 1.0, size=(cfg.n_nodes, cfg.n_nodes)),
    )

    store = init_baseline_params(kind, cfg, np.random.default_rng(seed + 1))
    y_hat = baseline_forward(window, kind, store, cfg, mode="relaxed", noise=noise)
    analytic = kernel.gradient_of_scalar(forecast_loss(y_hat, target), store.tensors())

    f = _loss_fn(kind, cfg, window, target, noise)
    numeric = kernel.finite_difference_gradient(f, store.export(), eps)

    errors = kernel.gradient_relative_error(analytic, numeric)
    return GradCheckResult(
        kind=kind,
        errors=errors,
        max_error=max(errors.values()),
        tolerance=tolerance,
    )

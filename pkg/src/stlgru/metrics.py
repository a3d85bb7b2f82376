"""Accuracy metrics and the cost accountant (parameter and FLOP counts)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .errors import ShapeError

Array = np.ndarray

DEFAULT_MAPE_FLOOR = 1.0

# External reference point: the full-scale PeMSD4 deployment of this
# architecture reports 348.54K parameters and 77.93G FLOPs. Printed next to
# our analytic count as context only; the exact layer composition behind the
# reported figures is not public, so no tolerance is claimed.
PEMSD4_REFERENCE = {
    "n_nodes": 307,
    "parameters": 348_540,
    "flops": 77.93e9,
}


@dataclass(frozen=True)
class MetricTriple:
    """MAE/RMSE in flow units, MAPE in percent, with the evaluated and
    MAPE-masked counts."""

    mae: float
    rmse: float
    mape: float
    n_evaluated: int
    masked_count: int


@dataclass(frozen=True)
class MetricsReport:
    """Per-horizon metrics (keyed by 1-based horizon step) plus metrics over
    the full prediction block."""

    per_horizon: dict[int, MetricTriple]
    overall: MetricTriple


def compute_metrics(y_hat, y_true, mape_floor: float = DEFAULT_MAPE_FLOOR) -> MetricTriple:
    """Metrics over all elements, in original (denormalized) units.

    MAPE divides by the target, so targets at or below ``mape_floor`` are
    excluded and counted in ``masked_count``; flow data contains near-zero
    values that would otherwise blow the percentage up.
    """
    pred = np.asarray(y_hat, dtype=np.float64)
    true = np.asarray(y_true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ShapeError(f"metric shape mismatch: {pred.shape} vs {true.shape}")
    err = pred - true
    mae = float(np.abs(err).mean())
    rmse = float(np.sqrt((err * err).mean()))
    mask = true > mape_floor
    masked_count = int(true.size - mask.sum())
    if mask.any():
        mape = float((np.abs(err[mask]) / true[mask]).mean() * 100.0)
    else:
        mape = 0.0
    return MetricTriple(
        mae=mae,
        rmse=rmse,
        mape=mape,
        n_evaluated=int(true.size),
        masked_count=masked_count,
    )


def horizon_report(
    y_hat: Array,
    y_true: Array,
    horizons: tuple[int, ...],
    mape_floor: float = DEFAULT_MAPE_FLOOR,
) -> MetricsReport:
    """Slice (windows, nodes, T') predictions per requested 1-based horizon."""
    pred = np.asarray(y_hat, dtype=np.float64)
    true = np.asarray(y_true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ShapeError(f"metric shape mismatch: {pred.shape} vs {true.shape}")
    t_out = pred.shape[-1]
    per_horizon = {}
    for h in horizons:
        if not 1 <= h <= t_out:
            raise ShapeError(f"horizon {h} outside the predicted range 1..{t_out}")
        per_horizon[h] = compute_metrics(pred[..., h - 1], true[..., h - 1], mape_floor)
    return MetricsReport(
        per_horizon=per_horizon,
        overall=compute_metrics(pred, true, mape_floor),
    )


@dataclass(frozen=True)
class CostReport:
    """Analytic parameter and per-window FLOP accounting; each breakdown sums
    exactly to its total."""

    parameter_total: int
    parameter_breakdown: dict[str, int]
    flops_total: int
    flops_breakdown: dict[str, int]


def count_parameters(cfg: ModelConfig) -> tuple[int, dict[str, int]]:
    """Analytic parameter count of the full forecaster.

    Must equal the size of the live parameter store built from the same
    config (tested against enumeration).
    """
    cfg.validate()
    n, d, c = cfg.n_nodes, cfg.embed_dim, cfg.hidden_dim
    breakdown = {
        "node_embedding": n * d,
        "input_proj": cfg.in_channels * c,
        "gcn_weight": c * c,
        "attn_weight": c * c,
        "gates": 6 * c * c,
        "head_w1": c * c,
        "head_b1": c,
        "head_w2": c * cfg.horizon,
        "head_b2": cfg.horizon,
    }
    return sum(breakdown.values()), breakdown


def estimate_flops(cfg: ModelConfig, t_in: int | None = None) -> tuple[int, dict[str, int]]:
    """Per-window FLOP estimate, counting a multiply-accumulate as 2 ops and
    an elementwise transcendental as 1 op.

    Matmul and elementwise work are itemized separately so scaling behavior
    per stage is visible (the gate matmuls are quadratic in hidden width).
    """
    cfg.validate()
    t = cfg.window if t_in is None else t_in
    n, c, t_out = cfg.n_nodes, cfg.hidden_dim, cfg.horizon
    breakdown = {
        "gcn": t * (2 * n * n * c + 2 * n * c * c),
        "maa_matmul": t * (2 * (2 * n) * c * c),
        "maa_softmax": t * (5 * (2 * n) * c),
        "maa_elementwise": t * (4 * n * c),
        "gates_matmul": t * (6 * 2 * n * c * c),
        "gates_elementwise": t * (10 * n * c),
        "head": 2 * n * c * c + 2 * n * c * t_out,
    }
    return sum(breakdown.values()), breakdown


def build_cost_report(cfg: ModelConfig, t_in: int | None = None) -> CostReport:
    p_total, p_break = count_parameters(cfg)
    f_total, f_break = estimate_flops(cfg, t_in)
    return CostReport(
        parameter_total=p_total,
        parameter_breakdown=p_break,
        flops_total=f_total,
        flops_breakdown=f_break,
    )


def format_count(value: float) -> str:
    """Human-readable count: 348540 -> '348.54K'."""
    for unit, scale in (("G", 1e9), ("M", 1e6), ("K", 1e3)):
        if abs(value) >= scale:
            return f"{value / scale:.2f}{unit}"
    return f"{value:.0f}"

"""Dataset preparation, Adam optimization, the training and evaluation
loops, and the checkpoint container."""

from __future__ import annotations

import base64
import json
import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernel
from .baselines import baseline_forward, init_baseline_params, persistence_forecast, resolve_config
from .config import ModelConfig, TrainConfig
from .data import SeriesTensor
from .errors import ConfigError, DivergenceError
from .metrics import DEFAULT_MAPE_FLOOR, MetricsReport, horizon_report
from .model import ParameterStore, loss as forecast_loss, make_graph_sample

logger = logging.getLogger(__name__)

Array = np.ndarray

CHECKPOINT_FORMAT = "stlgru-checkpoint-v1"
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
EVAL_CHUNK = 64


@dataclass(frozen=True)
class SplitIndices:
    """Chronological, contiguous, non-shuffled index ranges."""

    train: range
    test: range
    validation: range


def split_dataset(
    n_steps: int,
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
    order: str = "train_test_val",
    *,
    min_split: int | None = None,
) -> SplitIndices:
    """Chronological split; the middle segment is the test set by default,
    mirroring the train/test/validation ratio ordering."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    n_train = math.floor(ratios[0] * n_steps)
    n_test = math.floor(ratios[1] * n_steps)
    n_val = n_steps - n_train - n_test
    if min_split is not None:
        for name, size, ratio in (
            ("train", n_train, ratios[0]),
            ("test", n_test, ratios[1]),
            ("validation", n_val, ratios[2]),
        ):
            if ratio > 0 and size < min_split:
                raise ConfigError(
                    f"{name} split has {size} steps, shorter than one window ({min_split})"
                )
    if order == "train_test_val":
        train = range(0, n_train)
        test = range(n_train, n_train + n_test)
        validation = range(n_train + n_test, n_steps)
    elif order == "train_val_test":
        train = range(0, n_train)
        validation = range(n_train, n_train + n_val)
        test = range(n_train + n_val, n_steps)
    else:
        raise ConfigError(f"unknown split order {order!r}")
    return SplitIndices(train=train, test=test, validation=validation)


def windowize(values: Array, t_in: int, t_out: int) -> tuple[Array, Array]:
    """Cut a (steps, nodes, channels) block into non-overlapping windows.

    Consecutive disjoint blocks of length t_in + t_out (stride t_in + t_out;
    the trailing partial block is dropped). Returns inputs of shape
    (W, t_in, N, C) and channel-0 targets of shape (W, N, t_out).
    """
    if t_in < 1 or t_out < 1:
        raise ConfigError(f"window lengths must be >= 1, got {t_in}, {t_out}")
    block = t_in + t_out
    n_windows = values.shape[0] // block
    if n_windows == 0:
        warnings.warn(
            f"split of {values.shape[0]} steps is shorter than one window ({block})",
            stacklevel=2,
        )
        n = values.shape[1]
        return (
            np.empty((0, t_in, n, values.shape[2]), dtype=values.dtype),
            np.empty((0, n, t_out), dtype=values.dtype),
        )
    usable = values[: n_windows * block].reshape(n_windows, block, *values.shape[1:])
    inputs = usable[:, :t_in]
    targets = np.swapaxes(usable[:, t_in:, :, 0], 1, 2)
    return np.ascontiguousarray(inputs), np.ascontiguousarray(targets)


@dataclass(frozen=True)
class Normalizer:
    """Zero-mean normalization fitted on the training split only."""

    mean: float
    std: float

    @classmethod
    def fit(cls, train_values: Array) -> "Normalizer":
        arr = np.asarray(train_values, dtype=np.float64)
        if arr.size == 0:
            raise ConfigError("cannot fit a normalizer on an empty training split")
        std = float(arr.std())
        if std == 0.0:
            raise ConfigError(
                "training split is constant (std = 0); regenerate the synthetic "
                "dataset with nonzero noise or more periods"
            )
        return cls(mean=float(arr.mean()), std=std)

    def apply(self, values: Array) -> Array:
        return (np.asarray(values) - self.mean) / self.std

    def invert(self, values: Array) -> Array:
        return np.asarray(values) * self.std + self.mean


@dataclass
class AdamState:
    """Per-parameter first/second moments and the shared step counter."""

    m: dict[str, Array]
    v: dict[str, Array]
    t: int = 0
    skipped: int = 0

    @classmethod
    def for_store(cls, store: ParameterStore) -> "AdamState":
        return cls(
            m={name: np.zeros_like(p.data) for name, p in store.items()},
            v={name: np.zeros_like(p.data) for name, p in store.items()},
        )


def adam_step(
    store: ParameterStore,
    grads: dict[str, Array],
    state: AdamState,
    lr: float,
) -> bool:
    """Standard bias-corrected Adam update; skips (logs and counts) the step
    when any gradient is non-finite."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            state.skipped += 1
            logger.warning("skipping optimizer step %d: non-finite gradient in %r",
                           state.t + 1, name)
            return False
    state.t += 1
    bias1 = 1.0 - ADAM_BETA1 ** state.t
    bias2 = 1.0 - ADAM_BETA2 ** state.t
    for name, param in store.items():
        g = grads[name].astype(param.data.dtype, copy=False)
        state.m[name] = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        state.v[name] = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * (g * g)
        m_hat = state.m[name] / bias1
        v_hat = state.v[name] / bias2
        param.data = param.data - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return True


def clip_gradients(grads: dict[str, Array], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.
    Returns the pre-clip norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for name in grads:
            grads[name] = grads[name] * factor
    return total


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_mae: float


@dataclass
class TrainResult:
    kind: str
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    best_params: dict[str, Array]
    final_params: dict[str, Array]
    history: list[EpochStats]
    normalizer: Normalizer
    best_epoch: int
    stopped_early: bool


def _forward_eval(
    kind: str,
    store: ParameterStore,
    cfg: ModelConfig,
    inputs_norm: Array,
) -> Array:
    """Deterministic (hard-graph) predictions for a stack of windows."""
    preds = []
    for start in range(0, inputs_norm.shape[0], EVAL_CHUNK):
        chunk = inputs_norm[start : start + EVAL_CHUNK]
        out = baseline_forward(chunk, kind, store, cfg, mode="hard")
        preds.append(out.data)
    return np.concatenate(preds, axis=0)


def train(
    kind: str,
    series: SeriesTensor,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
) -> TrainResult:
    """Fit a model on the chronological training split.

    Minibatches shuffle whole windows, never timesteps. One fresh graph-noise
    draw is shared by every window and timestep inside a batch. The best
    validation-MAE parameters are retained; training stops early after
    ``patience`` epochs without improvement. Deterministic for a fixed seed.
    """
    if kind == "persistence":
        raise ConfigError("persistence has no trainable parameters")
    cfg = resolve_config(kind, model_cfg).validate()
    train_cfg.validate()
    if series.n_nodes != cfg.n_nodes:
        raise ConfigError(
            f"model expects {cfg.n_nodes} nodes, dataset has {series.n_nodes}"
        )

    block = cfg.window + cfg.horizon
    splits = split_dataset(
        series.n_steps, train_cfg.split_ratio, train_cfg.split_order, min_split=block
    )
    values = series.values
    normalizer = Normalizer.fit(values[splits.train.start : splits.train.stop])

    def prepared(rng_: range) -> tuple[Array, Array, Array]:
        segment = values[rng_.start : rng_.stop]
        inputs_raw, targets_raw = windowize(segment, cfg.window, cfg.horizon)
        inputs_norm = normalizer.apply(inputs_raw).astype(cfg.np_dtype)
        return inputs_norm, targets_raw, normalizer.apply(targets_raw).astype(cfg.np_dtype)

    train_x, _, train_y = prepared(splits.train)
    val_x, val_y_raw, val_y = prepared(splits.validation)
    if train_x.shape[0] == 0 or val_x.shape[0] == 0:
        raise ConfigError(
            f"need at least one training and one validation window of {block} steps"
        )

    seq = np.random.SeedSequence(train_cfg.seed)
    init_rng, noise_rng, shuffle_rng = (np.random.default_rng(s) for s in seq.spawn(3))
    store = init_baseline_params(kind, cfg, init_rng)
    adam = AdamState.for_store(store)

    history: list[EpochStats] = []
    best_params = store.export()
    best_mae = math.inf
    best_epoch = -1
    stopped_early = False
    n_windows = train_x.shape[0]

    for epoch in range(train_cfg.epochs):
        order = shuffle_rng.permutation(n_windows)
        batch_losses = []
        for batch_index, start in enumerate(range(0, n_windows, train_cfg.batch_size)):
            idx = order[start : start + train_cfg.batch_size]
            sample = make_graph_sample(store, cfg, mode="relaxed", rng=noise_rng)
            y_hat = baseline_forward(train_x[idx], kind, store, cfg, sample=sample, rng=noise_rng)
            batch_loss = forecast_loss(y_hat, train_y[idx])
            loss_value = batch_loss.item()
            if not math.isfinite(loss_value):
                raise DivergenceError(batch_index, train_cfg.seed)
            grads = kernel.gradient_of_scalar(batch_loss, store.tensors())
            clip_gradients(grads, train_cfg.clip_norm)
            adam_step(store, grads, adam, train_cfg.learning_rate)
            batch_losses.append(loss_value)

        val_pred_norm = _forward_eval(kind, store, cfg, val_x)
        val_loss = float(((val_pred_norm - val_y) ** 2).mean())
        val_mae = float(np.abs(normalizer.invert(val_pred_norm) - val_y_raw).mean())
        history.append(
            EpochStats(
                epoch=epoch,
                train_loss=float(np.mean(batch_losses)),
                val_loss=val_loss,
                val_mae=val_mae,
            )
        )
        if val_mae < best_mae:
            best_mae = val_mae
            best_params = store.export()
            best_epoch = epoch
        elif epoch - best_epoch > train_cfg.patience:
            stopped_early = True
            break

    if best_epoch < 0:
        best_params = store.export()
        best_epoch = 0
    return TrainResult(
        kind=kind,
        model_cfg=cfg,
        train_cfg=train_cfg,
        best_params=best_params,
        final_params=store.export(),
        history=history,
        normalizer=normalizer,
        best_epoch=best_epoch,
        stopped_early=stopped_early,
    )


def evaluate(
    kind: str,
    store: ParameterStore,
    cfg: ModelConfig,
    inputs_norm: Array,
    targets_raw: Array,
    normalizer: Normalizer,
    horizons: tuple[int, ...] = (3, 6, 12),
    mape_floor: float = DEFAULT_MAPE_FLOOR,
) -> MetricsReport:
    """Hard-graph evaluation in original units at the requested horizons."""
    if kind == "persistence":
        inputs_raw = normalizer.invert(inputs_norm)
        preds = persistence_forecast(inputs_raw, cfg.horizon)
    else:
        preds = normalizer.invert(_forward_eval(kind, store, cfg, inputs_norm))
    return horizon_report(preds, targets_raw, horizons, mape_floor)


def prepare_eval_windows(
    series: SeriesTensor,
    cfg: ModelConfig,
    train_cfg: TrainConfig,
    normalizer: Normalizer,
    split: str = "validation",
) -> tuple[Array, Array]:
    """Normalized inputs and raw targets for one split of a dataset."""
    splits = split_dataset(series.n_steps, train_cfg.split_ratio, train_cfg.split_order)
    segment_range = getattr(splits, split, None)
    if segment_range is None:
        raise ConfigError(f"unknown split {split!r}; use train, test, or validation")
    segment = series.values[segment_range.start : segment_range.stop]
    inputs_raw, targets_raw = windowize(segment, cfg.window, cfg.horizon)
    return normalizer.apply(inputs_raw).astype(cfg.np_dtype), targets_raw


# -- checkpoints -------------------------------------------------------------

def _encode_array(arr: Array) -> dict:
    tag = "f64le" if arr.dtype.itemsize == 8 else "f32le"
    wire = arr.astype("<f8" if tag == "f64le" else "<f4", copy=False)
    return {
        "shape": list(arr.shape),
        "dtype": tag,
        "data": base64.b64encode(wire.tobytes()).decode("ascii"),
    }


def _decode_array(entry: dict) -> Array:
    dtype = np.dtype("<f8" if entry["dtype"] == "f64le" else "<f4")
    flat = np.frombuffer(base64.b64decode(entry["data"]), dtype=dtype)
    return flat.reshape(entry["shape"]).astype(dtype.newbyteorder("="), copy=True)


def save_checkpoint(path, result: TrainResult) -> None:
    """Serialize config echo, named parameters, normalizer stats, seed, and
    epoch history into a versioned JSON container."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "kind": result.kind,
        "model_config": result.model_cfg.to_dict(),
        "train_config": result.train_cfg.to_dict(),
        "seed": result.train_cfg.seed,
        "normalizer": {"mean": result.normalizer.mean, "std": result.normalizer.std},
        "best_epoch": result.best_epoch,
        "history": [vars(h) for h in result.history],
        "params": {name: _encode_array(arr) for name, arr in result.best_params.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


@dataclass
class Checkpoint:
    kind: str
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    params: dict[str, Array]
    normalizer: Normalizer
    history: list[EpochStats]
    best_epoch: int

    def build_store(self) -> ParameterStore:
        rng = np.random.default_rng(0)
        store = init_baseline_params(self.kind, self.model_cfg, rng)
        store.load(self.params)
        return store


def load_checkpoint(path) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    tag = payload.get("format")
    if tag != CHECKPOINT_FORMAT:
        raise ConfigError(f"unsupported checkpoint format {tag!r}, expected {CHECKPOINT_FORMAT!r}")
    model_cfg = ModelConfig(**_tupled(payload["model_config"]))
    train_cfg = TrainConfig(**_tupled(payload["train_config"]))
    return Checkpoint(
        kind=payload["kind"],
        model_cfg=model_cfg,
        train_cfg=train_cfg,
        params={name: _decode_array(entry) for name, entry in payload["params"].items()},
        normalizer=Normalizer(**payload["normalizer"]),
        history=[EpochStats(**h) for h in payload["history"]],
        best_epoch=payload["best_epoch"],
    )


def _tupled(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}

"""Command-line surface.

Commands: synth, train, eval, gradcheck, inspect, ablate. Config precedence
is built-in defaults < --config file < command-line flags, and the resolved
config (plus seed) is echoed to stdout and into every artifact written.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .baselines import ABLATION_REFERENCE_MAE, BASELINE_KINDS, init_baseline_params
from .config import ModelConfig, SyntheticSpec, TrainConfig
from .data import generate_synthetic, load_series, save_series
from .errors import ConfigError, DataFormatError, DomainError, ShapeError
from .gradcheck import DEFAULT_TOLERANCE, run_gradient_check, toy_config
from .metrics import PEMSD4_REFERENCE, build_cost_report, format_count
from .training import (
    evaluate,
    load_checkpoint,
    prepare_eval_windows,
    save_checkpoint,
    train,
)

MODEL_FIELD_NAMES = {f.name for f in fields(ModelConfig)}
TRAIN_FIELD_NAMES = {f.name for f in fields(TrainConfig)}
SYNTH_FIELD_NAMES = {f.name for f in fields(SyntheticSpec)}
ABLATION_CELLS = ("stlgru", "stlgru_no_maa", "stlgru_no_gumbel", "stlgru_no_both")
ABLATION_LABELS = {
    "stlgru": "full",
    "stlgru_no_maa": "gumbel_only",
    "stlgru_no_gumbel": "maa_only",
    "stlgru_no_both": "neither",
}


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stlgru",
        description="Train and evaluate the lightweight spatio-temporal graph GRU forecaster.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--precision", choices=("f32", "f64"), default=None)

    def add_model_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--model", choices=BASELINE_KINDS, default=None)
        p.add_argument("--no-gumbel", action="store_true", default=None,
                       help="replace the sampled sparse graph with the dense softmax graph")
        p.add_argument("--no-maa", action="store_true", default=None,
                       help="bypass the attention module (context := graph output)")
        p.add_argument("--hidden-dim", type=int, default=None)
        p.add_argument("--embed-dim", type=int, default=None)
        p.add_argument("--tau", type=float, default=None)
        p.add_argument("--window", type=int, default=None, help="observed steps per window")
        p.add_argument("--pred-len", type=int, default=None, help="predicted steps per window")
        p.add_argument("--attention-axis", choices=("feature", "node"), default=None)
        p.add_argument("--hidden-init", choices=("zeros", "gaussian"), default=None)

    def add_train_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--batch", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--patience", type=int, default=None)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    add_common(p_synth)
    p_synth.add_argument("--out", type=Path, required=True)
    p_synth.add_argument("--nodes", type=int, default=None)
    p_synth.add_argument("--steps", type=int, default=None)
    p_synth.add_argument("--alpha", type=float, default=None)
    p_synth.add_argument("--noise-sigma", type=float, default=None)
    p_synth.add_argument("--periods", type=_int_list, default=None)
    p_synth.add_argument("--avg-degree", type=float, default=None)
    p_synth.add_argument("--graph-seed", type=int, default=None)
    p_synth.add_argument("--signal-seed", type=int, default=None)

    p_train = sub.add_parser("train", help="fit a model and write a checkpoint")
    add_common(p_train)
    add_model_flags(p_train)
    add_train_flags(p_train)
    p_train.add_argument("--data", type=Path, required=True)
    p_train.add_argument("--out", type=Path, required=True)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint (or persistence) on one split")
    add_common(p_eval)
    p_eval.add_argument("--checkpoint", type=Path, default=None)
    p_eval.add_argument("--data", type=Path, required=True)
    p_eval.add_argument("--out", type=Path, default=None)
    p_eval.add_argument("--model", choices=BASELINE_KINDS, default=None)
    p_eval.add_argument("--split", choices=("train", "test", "validation"), default="validation")
    p_eval.add_argument("--horizon", type=_int_list, default=None,
                        help="comma-separated 1-based horizon steps (default 3,6,12)")
    p_eval.add_argument("--window", type=int, default=None)
    p_eval.add_argument("--pred-len", type=int, default=None)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    add_common(p_grad)
    p_grad.add_argument("--model", choices=[k for k in BASELINE_KINDS if k != "persistence"],
                        default="stlgru")
    p_grad.add_argument("--eps", type=float, default=1e-5)
    p_grad.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)

    p_inspect = sub.add_parser("inspect", help="print parameter and FLOP accounting")
    add_common(p_inspect)
    add_model_flags(p_inspect)
    p_inspect.add_argument("--nodes", type=int, default=None, help="node count (or use --data)")
    p_inspect.add_argument("--data", type=Path, default=None)
    p_inspect.add_argument("--out", type=Path, default=None)

    p_ablate = sub.add_parser("ablate", help="train the four ablation cells and compare")
    add_common(p_ablate)
    add_model_flags(p_ablate)
    add_train_flags(p_ablate)
    p_ablate.add_argument("--data", type=Path, required=True)
    p_ablate.add_argument("--out", type=Path, required=True)
    p_ablate.add_argument("--seeds", type=_int_list, default=(0, 1, 2))
    p_ablate.add_argument("--horizon", type=_int_list, default=None)
    p_ablate.add_argument("--split", choices=("train", "test", "validation"), default="validation")

    return parser


# -- config resolution -------------------------------------------------------

_FLAG_TO_FIELD = {
    "hidden_dim": "hidden_dim",
    "embed_dim": "embed_dim",
    "tau": "tau",
    "window": "window",
    "pred_len": "horizon",
    "attention_axis": "attention_axis",
    "hidden_init": "hidden_init",
    "precision": "precision",
    "epochs": "epochs",
    "batch": "batch_size",
    "lr": "learning_rate",
    "seed": "seed",
    "patience": "patience",
    "nodes": "n_nodes",
    "steps": "n_steps",
    "alpha": "alpha",
    "noise_sigma": "noise",
    "periods": "periods",
    "avg_degree": "avg_degree",
    "graph_seed": "graph_seed",
    "signal_seed": "signal_seed",
}


def resolve_overrides(args: argparse.Namespace) -> dict:
    """Merge config-file values with explicit flags (flags win)."""
    merged: dict = {}
    config_path = getattr(args, "config", None)
    if config_path is not None:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                file_values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
        if not isinstance(file_values, dict):
            raise ConfigError(f"config file {config_path} must hold a JSON object")
        merged.update(file_values)
    for flag, field_name in _FLAG_TO_FIELD.items():
        value = getattr(args, flag, None)
        if value is not None:
            merged[field_name] = value
    if getattr(args, "no_gumbel", None):
        merged["use_gumbel"] = False
    if getattr(args, "no_maa", None):
        merged["use_maa"] = False
    if getattr(args, "model", None) is not None:
        merged["model"] = args.model
    return merged


def _pick(overrides: dict, names: set[str]) -> dict:
    picked = {k: v for k, v in overrides.items() if k in names}
    for key in ("periods", "split_ratio"):
        if key in picked and isinstance(picked[key], list):
            picked[key] = tuple(picked[key])
    return picked


def build_model_config(overrides: dict, n_nodes: int) -> ModelConfig:
    values = _pick(overrides, MODEL_FIELD_NAMES)
    values["n_nodes"] = n_nodes
    return ModelConfig(**values).validate()


def build_train_config(overrides: dict) -> TrainConfig:
    return TrainConfig(**_pick(overrides, TRAIN_FIELD_NAMES)).validate()


def build_synth_spec(overrides: dict) -> SyntheticSpec:
    return SyntheticSpec(**_pick(overrides, SYNTH_FIELD_NAMES)).validate()


def _echo(label: str, config: dict) -> None:
    print(f"resolved {label}: {json.dumps(config, sort_keys=True)}")


def _write_csv(path: Path, header: list[str], rows: list[list], config: dict, seed) -> None:
    """Plain CSV with a one-line header, preceded by config/seed comments so
    every artifact is self-describing."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# config: {json.dumps(config, sort_keys=True)}\n")
        fh.write(f"# seed: {seed}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


# -- commands ----------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    overrides = resolve_overrides(args)
    spec = build_synth_spec(overrides)
    echo = spec.to_dict()
    _echo("synthetic spec", echo)
    series, truth = generate_synthetic(spec)
    args.out.mkdir(parents=True, exist_ok=True)
    data_path = args.out / "synthetic.stsf"
    save_series(series, data_path, extra_header={"config": echo})
    rows = [[i, j, int(truth[i, j])] for i in range(truth.shape[0]) for j in range(truth.shape[1])]
    _write_csv(args.out / "truth_graph.csv", ["row", "col", "edge"], rows,
               echo, spec.graph_seed)
    print(f"wrote {data_path} ({series.n_steps} steps x {series.n_nodes} nodes) "
          f"and truth_graph.csv")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    overrides = resolve_overrides(args)
    kind = overrides.get("model", "stlgru")
    if kind == "persistence":
        raise ConfigError("persistence has no trainable parameters; use eval --model persistence")
    series = load_series(args.data)
    model_cfg = build_model_config(overrides, series.n_nodes)
    train_cfg = build_train_config(overrides)
    echo = {"model": kind, **model_cfg.to_dict(), **train_cfg.to_dict()}
    _echo("train config", echo)

    result = train(kind, series, model_cfg, train_cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    ckpt_path = args.out / "checkpoint.json"
    save_checkpoint(ckpt_path, result)
    _write_csv(
        args.out / "history.csv",
        ["epoch", "train_loss", "val_loss", "val_mae"],
        [[h.epoch, repr(h.train_loss), repr(h.val_loss), repr(h.val_mae)] for h in result.history],
        echo,
        train_cfg.seed,
    )
    last = result.history[-1] if result.history else None
    best = min((h.val_mae for h in result.history), default=float("nan"))
    print(f"trained {kind}: epochs={len(result.history)} best_val_mae={best:.4f} "
          f"stopped_early={result.stopped_early}")
    if last is not None:
        print(f"final epoch: train_loss={last.train_loss:.6f} val_mae={last.val_mae:.4f}")
    print(f"wrote {ckpt_path} and history.csv")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    overrides = resolve_overrides(args)
    series = load_series(args.data)
    horizons = args.horizon or (3, 6, 12)
    kind = overrides.get("model")

    if args.checkpoint is None:
        if kind != "persistence":
            raise ConfigError("eval needs --checkpoint, or --model persistence")
        model_cfg = build_model_config(overrides, series.n_nodes)
        train_cfg = build_train_config(overrides)
        from .training import Normalizer, split_dataset

        splits = split_dataset(series.n_steps, train_cfg.split_ratio, train_cfg.split_order)
        normalizer = Normalizer.fit(series.values[splits.train.start : splits.train.stop])
        store = None
        seed = train_cfg.seed
        echo = {"model": kind, **model_cfg.to_dict(), **train_cfg.to_dict()}
    else:
        ckpt = load_checkpoint(args.checkpoint)
        if ckpt.model_cfg.n_nodes != series.n_nodes:
            raise ConfigError(
                f"checkpoint expects {ckpt.model_cfg.n_nodes} nodes, "
                f"dataset has {series.n_nodes}"
            )
        kind = ckpt.kind
        model_cfg, train_cfg = ckpt.model_cfg, ckpt.train_cfg
        normalizer = ckpt.normalizer
        store = ckpt.build_store()
        seed = ckpt.train_cfg.seed
        echo = {"model": kind, **model_cfg.to_dict(), **train_cfg.to_dict()}
    _echo("eval config", echo)

    for h in horizons:
        if h > model_cfg.horizon:
            raise ConfigError(f"horizon {h} exceeds the model's prediction length {model_cfg.horizon}")
    inputs_norm, targets_raw = prepare_eval_windows(series, model_cfg, train_cfg, normalizer, args.split)
    if inputs_norm.shape[0] == 0:
        raise ConfigError(f"split {args.split!r} is shorter than one window")
    report = evaluate(kind, store, model_cfg, inputs_norm, targets_raw, normalizer, tuple(horizons))

    header = ["horizon", "mae", "rmse", "mape_percent", "n_evaluated", "masked_count"]
    rows = []
    print(f"{args.split} split, {inputs_norm.shape[0]} windows:")
    for h in horizons:
        m = report.per_horizon[h]
        rows.append([h, repr(m.mae), repr(m.rmse), repr(m.mape), m.n_evaluated, m.masked_count])
        print(f"  step {h:>2}: MAE {m.mae:8.4f}  RMSE {m.rmse:8.4f}  MAPE {m.mape:6.2f}%")
    o = report.overall
    rows.append(["all", repr(o.mae), repr(o.rmse), repr(o.mape), o.n_evaluated, o.masked_count])
    print(f"  overall: MAE {o.mae:8.4f}  RMSE {o.rmse:8.4f}  MAPE {o.mape:6.2f}%")
    if args.out is not None:
        _write_csv(args.out / "metrics.csv", header, rows, echo, seed)
        print(f"wrote {args.out / 'metrics.csv'}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    overrides = resolve_overrides(args)
    seed = overrides.get("seed", 0)
    precision = overrides.get("precision", "f64")
    cfg = toy_config(precision=precision)
    if precision != "f64":
        print("warning: gradient checks are only meaningful at f64", file=sys.stderr)
    _echo("gradcheck config", {"model": args.model, "seed": seed, "eps": args.eps,
                               "tolerance": args.tolerance, **cfg.to_dict()})
    result = run_gradient_check(args.model, seed=seed, eps=args.eps,
                                tolerance=args.tolerance, cfg=cfg)
    for name in sorted(result.errors):
        print(f"  {name:>16}: rel err {result.errors[name]:.3e}")
    status = "PASS" if result.passed else "FAIL"
    print(f"max relative error {result.max_error:.3e} (tolerance {result.tolerance:.1e}): {status}")
    return 0 if result.passed else 1


def cmd_inspect(args: argparse.Namespace) -> int:
    overrides = resolve_overrides(args)
    if args.data is not None:
        n_nodes = load_series(args.data).n_nodes
    elif args.nodes is not None:
        n_nodes = args.nodes
    else:
        raise ConfigError("inspect needs --nodes or --data to fix the node count")
    model_cfg = build_model_config(overrides, n_nodes)
    echo = model_cfg.to_dict()
    _echo("model config", echo)
    report = build_cost_report(model_cfg)
    print(f"parameters: {report.parameter_total} ({format_count(report.parameter_total)})")
    for name, count in report.parameter_breakdown.items():
        print(f"  {name:>16}: {count}")
    print(f"flops per window: {report.flops_total} ({format_count(report.flops_total)})")
    for name, count in report.flops_breakdown.items():
        print(f"  {name:>16}: {count}")
    if n_nodes == PEMSD4_REFERENCE["n_nodes"]:
        print(
            f"reference deployment at {n_nodes} nodes reports "
            f"{format_count(PEMSD4_REFERENCE['parameters'])} parameters and "
            f"{format_count(PEMSD4_REFERENCE['flops'])} FLOPs "
            f"(context only; composition not public)"
        )
    if args.out is not None:
        rows = [["parameters", "total", report.parameter_total]]
        rows += [["parameters", k, v] for k, v in report.parameter_breakdown.items()]
        rows += [["flops", "total", report.flops_total]]
        rows += [["flops", k, v] for k, v in report.flops_breakdown.items()]
        _write_csv(args.out / "cost.csv", ["section", "item", "count"], rows, echo, "-")
        print(f"wrote {args.out / 'cost.csv'}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    overrides = resolve_overrides(args)
    overrides.pop("model", None)
    series = load_series(args.data)
    model_cfg = build_model_config(overrides, series.n_nodes)
    train_cfg = build_train_config(overrides)
    horizons = args.horizon or (3, 6, 12)
    seeds = args.seeds
    echo = {**model_cfg.to_dict(), **train_cfg.to_dict(), "seeds": list(seeds)}
    _echo("ablation config", echo)

    rows = []
    means: dict[str, float] = {}
    for cell in ABLATION_CELLS:
        maes = []
        for seed in seeds:
            cell_train_cfg = TrainConfig(**{**train_cfg.to_dict(), "seed": seed})
            result = train(cell, series, model_cfg, cell_train_cfg)
            inputs_norm, targets_raw = prepare_eval_windows(
                series, result.model_cfg, cell_train_cfg, result.normalizer, args.split
            )
            store = init_baseline_params(cell, result.model_cfg, np.random.default_rng(0))
            store.load(result.best_params)
            report = evaluate(cell, store, result.model_cfg, inputs_norm, targets_raw,
                              result.normalizer, tuple(horizons))
            maes.append(report.overall.mae)
            rows.append([ABLATION_LABELS[cell], seed, repr(report.overall.mae)])
            print(f"  {ABLATION_LABELS[cell]:>12} seed {seed}: MAE {report.overall.mae:.4f}")
        means[cell] = float(np.mean(maes))

    order = sorted(ABLATION_CELLS, key=lambda c: means[c])
    print("mean MAE over seeds:")
    for cell in order:
        print(f"  {ABLATION_LABELS[cell]:>12}: {means[cell]:.4f}")
    reference = " < ".join(
        f"{label} {ABLATION_REFERENCE_MAE[label]}"
        for label in ("full", "gumbel_only", "maa_only", "neither")
    )
    print(f"full-scale reference ordering: {reference}")
    rows += [[f"mean_{ABLATION_LABELS[c]}", "-", repr(means[c])] for c in ABLATION_CELLS]
    _write_csv(args.out / "ablation.csv", ["variant", "seed", "val_mae"], rows, echo, list(seeds))
    print(f"wrote {args.out / 'ablation.csv'}")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "inspect": cmd_inspect,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, DataFormatError, DomainError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001  (CLI boundary)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

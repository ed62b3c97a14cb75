"""Command-line surface tying the library together.

Subcommands: synth, pretrain, train, eval, explain, importance, gridsearch,
ablation, stats. Exit codes: 0 success, 2 usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    SyntheticSpec,
    generate_synthetic,
    parse_ts,
    uea_layout_hint,
    write_ts,
    znormalize,
)
from .evaluation import (
    ABLATION_VARIANTS,
    GridSpec,
    average_ranks,
    friedman_nemenyi,
    grid_search_cv,
    read_accuracy_csv,
    run_ablation,
)
from .explain import build_prototype_cards, explain_instance, export_report
from .model import EncoderConfig, ProtoTSNet
from .training import TrainConfig, fit

__all__ = ["cli_dispatch", "main", "load_run_config", "RunConfig"]


@dataclasses.dataclass
class RunConfig:
    """Flat JSON config: training schedule + encoder structure + model knobs."""

    train: TrainConfig
    encoder: EncoderConfig
    reception: float = 0.5
    proto_len_fraction: float = 0.2
    protos_per_class: int = 10
    epsilon: float = 1e-4
    grouped: bool = True
    normalize: bool = False


_MODEL_KEYS = ("reception", "proto_len_fraction", "protos_per_class",
               "epsilon", "grouped", "normalize")


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read the JSON config; unknown keys are rejected."""
    raw = {}
    if path is not None:
        with open(path) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ValueError("config file must contain a JSON object")
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})

    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    enc_fields = {f.name for f in dataclasses.fields(EncoderConfig)}
    unknown = set(raw) - train_fields - enc_fields - set(_MODEL_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")

    enc_kwargs = {k: tuple(v) if isinstance(v, list) else v
                  for k, v in raw.items() if k in enc_fields}
    train_kwargs = {k: v for k, v in raw.items() if k in train_fields}
    model_kwargs = {k: v for k, v in raw.items() if k in _MODEL_KEYS}
    return RunConfig(
        train=TrainConfig(**train_kwargs),
        encoder=EncoderConfig(**enc_kwargs),
        **model_kwargs,
    )


def _load_dataset(path):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"dataset file {p} not found\n{uea_layout_hint()}")
    return parse_ts(p)


def _build_model(ds, cfg: RunConfig, seed: int) -> ProtoTSNet:
    return ProtoTSNet(
        ds.num_features, ds.num_classes, ds.series_length,
        reception=cfg.reception, proto_len_fraction=cfg.proto_len_fraction,
        protos_per_class=cfg.protos_per_class, encoder=cfg.encoder,
        epsilon=cfg.epsilon, grouped=cfg.grouped, seed=seed,
    )


def _normalize_extra(cfg, ds):
    """Apply z-normalization when configured; stats ride in the checkpoint."""
    if not cfg.normalize:
        return ds, {}
    ds, (mean, std) = znormalize(ds)
    return ds, {"normalize": {"mean": mean.tolist(), "std": std.tolist()}}


def _apply_saved_normalization(ds, extra):
    if extra.get("normalize"):
        stats = (np.asarray(extra["normalize"]["mean"]), np.asarray(extra["normalize"]["std"]))
        ds, _ = znormalize(ds, stats)
    return ds


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train = generate_synthetic(SyntheticSpec(args.n_per_class, args.noise_std, args.seed))
    test = generate_synthetic(SyntheticSpec(args.n_per_class, args.noise_std, args.seed + 1))
    train.name = test.name = args.name
    train_path = out_dir / f"{args.name}_TRAIN.ts"
    test_path = out_dir / f"{args.name}_TEST.ts"
    write_ts(train, train_path)
    write_ts(test, test_path)
    print(f"wrote {train_path} ({train.n_series} series) and {test_path} ({test.n_series} series)")
    return 0


def _cmd_pretrain(args) -> int:
    cfg = load_run_config(args.config)
    ds = _load_dataset(args.dataset)
    ds, extra = _normalize_extra(cfg, ds)
    model = _build_model(ds, cfg, args.seed if args.seed is not None else cfg.train.seed)
    pre_only = dataclasses.replace(cfg.train, warm_epochs=0, cycles=0)
    history = fit(model, ds.x, ds.labels, pre_only)
    save_checkpoint(model, args.out, extra=extra)
    final = history[-1].total if history else float("nan")
    print(f"pretrained {cfg.train.pretrain_epochs} epochs, final reconstruction MSE {final:.6f}")
    print(f"saved {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    ds = _load_dataset(args.dataset)
    ds, extra = _normalize_extra(cfg, ds)
    if args.init is not None:
        model, init_extra = load_checkpoint(args.init)
        extra = extra or init_extra
        train_cfg = dataclasses.replace(cfg.train, pretrain_epochs=0)
    else:
        model = _build_model(ds, cfg, args.seed if args.seed is not None else cfg.train.seed)
        train_cfg = cfg.train
    history = fit(
        model, ds.x, ds.labels, train_cfg,
        history_path=args.history, checkpoint_dir=args.checkpoint_dir,
    )
    save_checkpoint(model, args.out, extra=extra)
    acc = history[-1].train_acc if history else float("nan")
    print(f"trained {len(history)} epochs, final train accuracy {acc:.4f}")
    print(f"saved {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model, extra = load_checkpoint(args.model)
    ds = _apply_saved_normalization(_load_dataset(args.dataset), extra)
    acc = model.accuracy(ds.x, ds.labels)
    print(f"accuracy {acc:.4f} on {ds.n_series} series")
    return 0


def _cmd_explain(args) -> int:
    model, extra = load_checkpoint(args.model)
    train = _apply_saved_normalization(_load_dataset(args.train), extra)
    test = _apply_saved_normalization(_load_dataset(args.dataset), extra)
    model.class_names = list(train.class_names)
    cards = build_prototype_cards(model, train)
    count = test.n_series if args.max_instances is None else min(args.max_instances, test.n_series)
    explanations = [
        explain_instance(model, test.x[i], instance_id=i, top_k=args.top_k)
        for i in range(count)
    ]
    report = export_report(
        cards, explanations, model.feature_importance(), args.out,
        model_config={"reception": model.reception,
                      "proto_len_fraction": model.proto_len_fraction,
                      "latent_length": model.latent_length},
        series_for_cards=train,
        series_for_instances=test.x[:count],
    )
    print(f"wrote {report} plus {len(cards)} prototype and {count} instance SVGs")
    return 0


def _cmd_importance(args) -> int:
    model, _ = load_checkpoint(args.model)
    importance = model.feature_importance()
    for m, value in enumerate(importance):
        print(f"feature {m}: {value:.6g}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"importance": [float(f"{v:.9g}") for v in importance]}, fh)
        print(f"saved {args.out}")
    return 0


def _cmd_gridsearch(args) -> int:
    cfg = load_run_config(args.config)
    ds = _load_dataset(args.dataset)
    if cfg.normalize:
        ds, _ = znormalize(ds)
    grid = GridSpec(
        receptions=tuple(args.receptions) if args.receptions else GridSpec.receptions,
        proto_fractions=tuple(args.proto_lens) if args.proto_lens else GridSpec.proto_fractions,
        folds=args.folds,
    )
    result = grid_search_cv(
        ds, grid, cfg.train, encoder=cfg.encoder,
        protos_per_class=cfg.protos_per_class, runs_csv=args.runs_csv,
    )
    for reception, fraction, acc, _ in result.table:
        print(f"r={reception:<5g} L={fraction:<5g} cv_acc={acc:.4f}")
    print(f"best: r={result.best_reception} L={result.best_proto_fraction} "
          f"cv_acc={result.best_accuracy:.4f}")
    return 0


def _cmd_ablation(args) -> int:
    cfg = load_run_config(args.config)
    train = _load_dataset(args.train)
    test = _load_dataset(args.test)
    if cfg.normalize:
        train, stats = znormalize(train)
        test, _ = znormalize(test, stats)
    outcome = run_ablation(
        train, test, args.variant, cfg.train,
        reception=cfg.reception, proto_fraction=cfg.proto_len_fraction,
        protos_per_class=cfg.protos_per_class, encoder=cfg.encoder, seed=args.seed,
    )
    print(f"{args.variant} test accuracy {outcome.accuracy:.4f}")
    return 0


def _cmd_stats(args) -> int:
    table = average_ranks(read_accuracy_csv(args.table))
    width = max(len(m) for m in table.methods)
    for m, rank, wins in zip(table.methods, table.avg_rank, table.wins_ties):
        print(f"{m:<{width}}  avg_rank {rank:.2f}  wins/ties {wins}")
    if len(table.methods) >= 3 and len(table.datasets) >= 2:
        result = friedman_nemenyi(table, alpha=args.alpha)
        print(f"chi2_F {result.chi2:.4f}  F_F {result.f_stat:.4f}  p {result.p_value:.4g}  "
              f"CD {result.critical_difference:.4f} (alpha={args.alpha})")
        if result.significant:
            for a, b in result.significant:
                print(f"significant: {a} vs {b}")
        else:
            print("significant: none")
    return 0


# ---------------------------------------------------------------------------
# parser / dispatch
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prototsnet",
        description="Prototype-based interpretable time-series classification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic benchmark as .ts files")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--name", default="synthetic")
    p.add_argument("--n-per-class", type=int, default=10)
    p.add_argument("--noise-std", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("pretrain", help="run autoencoder pretraining only and save a checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("train", help="run the full staged training")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--init", help="start from a pretrained checkpoint (skips phase 1)")
    p.add_argument("--history", help="write the per-epoch CSV here")
    p.add_argument("--checkpoint-dir", help="write a checkpoint at every projection")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a .ts file")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("explain", help="export report.json and SVG explanations")
    p.add_argument("--model", required=True)
    p.add_argument("--train", required=True, help="training .ts file (prototype sources)")
    p.add_argument("--dataset", required=True, help="instances to explain")
    p.add_argument("--out", required=True)
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--max-instances", type=int)
    p.set_defaults(func=_cmd_explain)

    p = sub.add_parser("importance", help="print (and optionally save) feature importance")
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_importance)

    p = sub.add_parser("gridsearch", help="grid-search CV over reception x prototype length")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config")
    p.add_argument("--receptions", type=float, nargs="+")
    p.add_argument("--proto-lens", type=float, nargs="+")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--runs-csv", help="append per-run rows here (resumable sweeps)")
    p.set_defaults(func=_cmd_gridsearch)

    p = sub.add_parser("ablation", help="train one encoder/pretraining variant")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--variant", required=True, choices=ABLATION_VARIANTS)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_ablation)

    p = sub.add_parser("stats", help="average ranks and critical differences from a results CSV")
    p.add_argument("--table", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=_cmd_stats)

    return parser


def cli_dispatch(argv) -> int:
    """Parse argv (without the program name) and run the subcommand."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))

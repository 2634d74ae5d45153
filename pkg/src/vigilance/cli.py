"""Command-line pipeline: synth, features, train, predict, evaluate, explain, cv.

Every run validates its inputs before doing any work, writes outputs via
temp-file-and-rename, and leaves a ``<output>.manifest.json`` next to its
primary output echoing the resolved configuration.

Exit codes: 0 success, 1 computation error, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, baselines, evaluate, explain, gbt
from ._kernels import BACKEND
from .dataio import (SYNTH_KEY_DOC, SynthConfig, atomic_write_text, format_kv, label_names, load_dataset_csv,
                     read_kv_file, stratified_split, synth_dataset, write_dataset_csv)
from .errors import ConfigError, FormatError, LabelError, SchemaError, VigilanceError
from .features import FeatureSchema, extract_matrix, fit_standardizer, read_feature_csv, write_feature_csv
from .modelio import model_family
from .spectral import WelchConfig

logger = logging.getLogger("vigilance")

EXIT_OK, EXIT_COMPUTE, EXIT_USAGE = 0, 1, 2
_USAGE_ERRORS = (ConfigError, FormatError, SchemaError, LabelError, OSError)

# CLI flag -> GbtConfig field
_GBT_FLAGS = {"eta": "eta", "rounds": "n_rounds", "max_depth": "max_depth", "subsample": "subsample",
              "colsample": "colsample", "gamma": "min_split_loss", "lambda_": "l2",
              "min_child_weight": "min_child_weight"}


class UsageError(VigilanceError):
    pass


# --------------------------------------------------------------------------
# Helpers


def _require_inputs(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise UsageError(f"input file not found: {p}")


def _write_manifest(primary: str | Path, command: str, args: argparse.Namespace, **extra) -> None:
    resolved = {k: v for k, v in vars(args).items() if k not in ("func", "config") and not k.startswith("_")}
    manifest = {
        "command": command,
        "args": resolved,
        "config_file": args.config,
        "package_version": __version__,
        "kernel_backend": BACKEND,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "model_format_versions": {"gbt": gbt.FORMAT_VERSION, "logistic": baselines.FORMAT_VERSION,
                                  "mlp": baselines.FORMAT_VERSION},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    manifest.update(extra)
    atomic_write_text(f"{primary}.manifest.json", json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _load_model(path: str):
    family = model_family(path)
    if family == "gbt":
        return family, gbt.load_model(path)
    return family, baselines.load_baseline(path)


def _predict_proba(family: str, model, X: np.ndarray) -> np.ndarray:
    if family == "gbt":
        return gbt.predict_proba(model, X)
    return baselines.baseline_predict(model, X)


def _check_schema(model, schema: FeatureSchema, model_path: str, feature_path: str) -> None:
    if model.schema_id != schema.schema_id:
        raise SchemaError(
            f"schema mismatch: model {model_path} uses {model.schema_id!r}, "
            f"features {feature_path} use {schema.schema_id!r}"
        )


def _labeled(y: np.ndarray, path: str) -> None:
    if np.any(y < 0):
        raise LabelError(f"{path}: row {int(np.flatnonzero(y < 0)[0]) + 2} has no label")


# --------------------------------------------------------------------------
# Subcommands


def cmd_synth(args) -> None:
    cfg = SynthConfig.from_kv({**args._synth_kv, "n_per_class": str(args.per_class),
                               **({"noise_sigma": str(args.noise_sigma)} if args.noise_sigma is not None else {})})
    ds = synth_dataset(cfg, seed=args.seed)
    write_dataset_csv(ds, args.out)
    if args.dump_config:
        atomic_write_text(args.dump_config, format_kv_doc(cfg))
    _write_manifest(args.out, "synth", args, synth_config=cfg.to_kv(), n_epochs=len(ds.epochs))
    print(f"wrote {len(ds.epochs)} epochs to {args.out}")


def format_kv_doc(cfg: SynthConfig) -> str:
    return format_kv(cfg.to_kv(), SYNTH_KEY_DOC)


def cmd_features(args) -> None:
    _require_inputs(args.input)
    ds = load_dataset_csv(args.input, fs=args.fs)
    schema = FeatureSchema.by_name(args.schema)
    welch = WelchConfig(segment_len=args.segment_len, overlap=args.overlap, window=args.window)
    X, flags = extract_matrix(ds, schema, welch, mmd_window=args.mmd_window, threads=args.threads)
    write_feature_csv(args.out, X, schema, ds.labels())
    n_flagged = sum(1 for f in flags if f)
    if n_flagged:
        logger.warning("%d of %d epochs carry QC flags", n_flagged, len(flags))
    _write_manifest(args.out, "features", args, schema_id=schema.schema_id, n_rows=int(X.shape[0]),
                    n_flagged=n_flagged)
    print(f"wrote {X.shape[0]} x {X.shape[1]} features ({schema.schema_id}) to {args.out}")


def _gbt_config(args) -> gbt.GbtConfig:
    kw = {field: getattr(args, flag) for flag, field in _GBT_FLAGS.items()}
    return gbt.GbtConfig(seed=args.seed, **kw)


def cmd_train(args) -> None:
    _require_inputs(args.features)
    X, schema, y = read_feature_csv(args.features)
    _labeled(y, args.features)
    if args.holdout_out:
        split = stratified_split(y, (1.0 - args.holdout_frac, args.holdout_frac), seed=args.seed)
        write_feature_csv(args.holdout_out, X[split.test], schema, y[split.test])
        X, y = X[split.train], y[split.train]
    extra = {"schema_id": schema.schema_id, "n_train": int(X.shape[0])}
    if args.model == "gbt":
        cfg = _gbt_config(args)
        model = gbt.train_gbt(X, y, cfg, schema.names, schema.schema_id)
        text = gbt.save_model(model, args.out)
        if args.log_out:
            rows = ["round,train_log_loss"] + [f"{i},{v!r}" for i, v in enumerate(model.history)]
            atomic_write_text(args.log_out, "\n".join(rows) + "\n")
        extra["gbt_config"] = cfg.__dict__
    elif args.model == "logistic":
        std = fit_standardizer(X, schema.schema_id)
        lr = args.lr if args.lr is not None else 0.1
        model = baselines.train_logistic(std.transform(X), y, l2=args.l2, lr=lr, max_iter=args.max_iter,
                                         tol=args.tol, feature_names=schema.names,
                                         schema_id=schema.schema_id, standardizer=std)
        text = baselines.save_baseline(model, args.out)
    else:
        split = stratified_split(y, (1.0 - args.val_frac, args.val_frac), seed=args.seed)
        std = fit_standardizer(X[split.train], schema.schema_id)
        cfg = baselines.MlpConfig(hidden=tuple(args.hidden), epochs=args.epochs, batch_size=args.batch_size,
                                  lr=args.lr if args.lr is not None else 1e-3, dropout=args.dropout,
                                  patience=args.patience, seed=args.seed)
        model, log = baselines.train_mlp(std.transform(X[split.train]), y[split.train],
                                         std.transform(X[split.test]), y[split.test], cfg,
                                         feature_names=schema.names, schema_id=schema.schema_id,
                                         standardizer=std)
        text = baselines.save_baseline(model, args.out)
        if args.log_out:
            atomic_write_text(args.log_out, log.to_csv())
        extra["best_epoch"] = log.best_epoch
    _write_manifest(args.out, "train", args, **extra)
    print(text)


def cmd_predict(args) -> None:
    _require_inputs(args.model_file, args.features)
    family, model = _load_model(args.model_file)
    X, schema, _ = read_feature_csv(args.features)
    _check_schema(model, schema, args.model_file, args.features)
    P = _predict_proba(family, model, X)
    names = label_names()
    lines = ["row_id,label," + ",".join(f"p_{n}" for n in names)]
    for i, row in enumerate(P):
        lines.append(f"{i},{names[int(np.argmax(row))]}," + ",".join(repr(float(v)) for v in row))
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    _write_manifest(args.out, "predict", args, model_family=family, schema_id=schema.schema_id)
    print(f"wrote {P.shape[0]} predictions to {args.out}")


def read_predictions_csv(path: str) -> np.ndarray:
    names = label_names()
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        want = ["row_id", "label"] + [f"p_{n}" for n in names]
        if header != want:
            raise FormatError(f"{path}: expected header {','.join(want)}")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.strip().split(",")
            try:
                rows.append([float(v) for v in parts[2:]])
            except ValueError as exc:
                raise FormatError(f"{path}: row {lineno}: {exc}") from None
            if len(rows[-1]) != len(names):
                raise FormatError(f"{path}: row {lineno}: expected {len(names)} probabilities")
    return np.array(rows).reshape(-1, len(names))


def cmd_evaluate(args) -> None:
    _require_inputs(args.predictions, args.truth)
    P = read_predictions_csv(args.predictions)
    _, _, y = read_feature_csv(args.truth)
    _labeled(y, args.truth)
    if y.shape[0] != P.shape[0]:
        raise UsageError(f"{args.predictions} has {P.shape[0]} rows, {args.truth} has {y.shape[0]}")
    rep = evaluate.metrics(evaluate.confusion(y, np.argmax(P, axis=1)))
    cal = evaluate.reliability(P, y, n_bins=args.bins)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "metrics.csv", rep.as_csv())
    atomic_write_text(out / "metrics.txt", rep.as_table())
    atomic_write_text(out / "calibration.csv", cal.as_csv())
    conf = P.max(axis=1)
    correct = np.argmax(P, axis=1) == y
    atomic_write_text(out / "calibration_samples.csv", "row_id,true_label,confidence,correct\n" + "".join(
        f"{i},{int(y[i])},{float(conf[i])!r},{int(correct[i])}\n" for i in range(y.shape[0])))
    _write_manifest(out / "metrics.csv", "evaluate", args, brier=cal.brier, max_deviation=cal.max_deviation)
    sys.stdout.write(rep.as_table())
    print(f"brier {cal.brier:.6f}  max calibration deviation {cal.max_deviation:.4f}")


def cmd_explain(args) -> None:
    _require_inputs(args.model_file, args.features)
    family, model = _load_model(args.model_file)
    if family != "gbt":
        raise UsageError(f"explain needs a gbt model, {args.model_file} is {family!r}")
    X, schema, _ = read_feature_csv(args.features)
    _check_schema(model, schema, args.model_file, args.features)
    if args.max_rows is not None:
        X = X[:args.max_rows]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    imp = explain.gain_importance(model)
    explain.write_importance_csv(imp, out / "importance.csv")
    summ = explain.shap_summary(model, X)
    explain.write_shap_csv(summ, out / "shap.csv", label_names())
    explain.write_shap_ranking_csv(summ, out / "shap_ranking.csv")
    _write_manifest(out / "shap.csv", "explain", args, n_rows=int(X.shape[0]))
    for name, gain, share in imp.ranked()[:10]:
        print(f"{name:<24} gain {gain:12.4f}  share {share:.4f}")


def _parse_grid(items: Sequence[str]) -> dict[str, list]:
    grid: dict[str, list] = {}
    for item in items:
        key, sep, vals = item.partition("=")
        if not sep or not vals:
            raise UsageError(f"bad --grid entry {item!r}; expected name=v1,v2,...")
        key = key.strip()
        parsed = []
        for v in vals.split(","):
            v = v.strip()
            try:
                parsed.append(int(v))
            except ValueError:
                try:
                    parsed.append(float(v))
                except ValueError:
                    raise UsageError(f"--grid {key}: {v!r} is not a number") from None
        grid[key] = parsed
    return grid


def cmd_cv(args) -> None:
    _require_inputs(args.features)
    X, schema, y = read_feature_csv(args.features)
    _labeled(y, args.features)
    params = _parse_grid(args.grid)
    if args.model == "gbt":
        params = {_GBT_FLAGS.get(k.replace("lambda", "lambda_"), k): v for k, v in params.items()}
        params.setdefault("n_rounds", [args.rounds])
    spec = evaluate.GridSpec(params, folds=args.folds, seed=args.seed)
    results = evaluate.cross_validate(X, y, spec, args.model, threads=args.threads)
    atomic_write_text(args.out, evaluate.cv_table_csv(results))
    _write_manifest(args.out, "cv", args, schema_id=schema.schema_id, grid=params)
    best = results[0]
    print(f"best {best.params}: macro-F1 {best.mean_f1:.4f} +/- {best.std_f1:.4f}, "
          f"accuracy {best.mean_accuracy:.4f}")


# --------------------------------------------------------------------------
# Parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' file; explicit flags take precedence")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vigilance", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic EEG dataset")
    _common(p)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-config", help="also write the resolved generator config here")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", help="extract a feature matrix from a dataset CSV")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--schema", choices=("compact", "extended", "raw_plus_compact"), default="compact")
    p.add_argument("--fs", type=float, default=500.0)
    p.add_argument("--segment-len", type=int, default=1000)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--window", choices=("hann", "hamming", "boxcar"), default="hann")
    p.add_argument("--mmd-window", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train a model on a feature CSV")
    _common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--model", choices=("gbt", "logistic", "mlp"), default="gbt")
    p.add_argument("--out", required=True)
    p.add_argument("--log-out", help="per-round (gbt) or per-epoch (mlp) training log CSV")
    p.add_argument("--holdout-out", help="hold out a stratified test split and write it here")
    p.add_argument("--holdout-frac", type=float, default=0.2)
    g = p.add_argument_group("gbt")
    g.add_argument("--eta", type=float, default=0.1)
    g.add_argument("--rounds", type=int, default=500)
    g.add_argument("--max-depth", type=int, default=6)
    g.add_argument("--subsample", type=float, default=0.8)
    g.add_argument("--colsample", type=float, default=0.8)
    g.add_argument("--gamma", type=float, default=0.0)
    g.add_argument("--lambda", dest="lambda_", type=float, default=1.0)
    g.add_argument("--min-child-weight", type=float, default=1.0)
    g = p.add_argument_group("logistic / mlp")
    g.add_argument("--l2", type=float, default=1e-3)
    g.add_argument("--lr", type=float, help="learning rate (logistic 0.1, mlp 1e-3)")
    g.add_argument("--max-iter", type=int, default=5000)
    g.add_argument("--tol", type=float, default=1e-6)
    g.add_argument("--hidden", type=int, nargs="+", default=[128, 64])
    g.add_argument("--epochs", type=int, default=100)
    g.add_argument("--batch-size", type=int, default=32)
    g.add_argument("--dropout", type=float, default=0.3)
    g.add_argument("--patience", type=int, default=10)
    g.add_argument("--val-frac", type=float, default=0.15)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="class probabilities for a feature CSV")
    _common(p)
    p.add_argument("--model-file", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="metrics and calibration for predictions")
    _common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--truth", required=True, help="labeled feature CSV in the same row order")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", help="gain importance and SHAP tables for a gbt model")
    _common(p)
    p.add_argument("--model-file", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--max-rows", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("cv", help="stratified k-fold grid search")
    _common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--model", choices=("gbt", "logistic", "mlp"), default="gbt")
    p.add_argument("--grid", action="append", default=[], metavar="NAME=V1,V2",
                   help="hyperparameter values; repeat per parameter")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--rounds", type=int, default=500, help="gbt rounds when not in the grid")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cv)
    return parser


def _subparser(parser: argparse.ArgumentParser) -> argparse._SubParsersAction:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action
    raise AssertionError("no subparsers")


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> dict[str, str]:
    """Install config-file values as subcommand defaults; return leftover generator keys."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in _subparser(parser).choices), None)
    if not known.config or command is None:
        return {}
    _require_inputs(known.config)
    kv = read_kv_file(known.config)
    sp = _subparser(parser).choices[command]
    actions = {a.dest: a for a in sp._actions}
    synth_keys = set(SynthConfig().to_kv())
    defaults, synth_kv = {}, {}
    for key, raw in kv.items():
        dest = key.replace("-", "_")
        dest = "lambda_" if dest == "lambda" else dest
        if dest in actions and dest not in ("help", "config"):
            a = actions[dest]
            try:
                if a.nargs in ("+", "*"):
                    defaults[dest] = [a.type(v) if a.type else v for v in raw.replace(",", " ").split()]
                else:
                    defaults[dest] = a.type(raw) if a.type else raw
            except ValueError:
                raise ConfigError(f"{known.config}: {key} = {raw!r} is not valid") from None
            if a.choices and defaults[dest] not in a.choices:
                raise ConfigError(f"{known.config}: {key} must be one of {sorted(a.choices)}")
            a.required = False
        elif command == "synth" and key in synth_keys:
            synth_kv[key] = raw
        else:
            raise ConfigError(f"{known.config}: unknown key {key!r} for '{command}'")
    sp.set_defaults(**defaults)
    return synth_kv


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        synth_kv = _apply_config(parser, argv)
    except (UsageError, *_USAGE_ERRORS) as exc:
        print(f"vigilance: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    args._synth_kv = synth_kv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        args.func(args)
    except (UsageError, *_USAGE_ERRORS) as exc:
        print(f"vigilance {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (VigilanceError, ValueError, ArithmeticError) as exc:
        print(f"vigilance {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

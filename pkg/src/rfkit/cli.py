"""Command-line entry point.

Subcommands: train, tune, eval, predict, combine, compose. Flags override
config-file keys (flat ``key = value`` text), which override defaults.
Every command is bit-reproducible given the same flags and --seed.
Exit codes: 0 success, 1 usage error, 2 I/O or file-format error,
3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as dio
from . import mlr
from .combinators import AdditiveSpec, ProductSpec, compose_pipeline
from .ensemble import (
    BlockEnsemble,
    CombinedModel,
    combine_logits,
    learn_combination_weights,
    partition,
    train_blocks,
)
from .errors import FormatError
from .features import KernelSpec, median_bandwidth
from .metrics import REPORT_HEADER, EvalReport, accuracy, evaluate, perplexity
from .mlr import TrainConfig, softmax
from .rng import derive_seed
from .serialize import export_logits, import_logits, load_model, save_model

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

STEP_SIZE_GRID = (1e-4, 1e-3, 1e-2, 1e-1)
BANDWIDTH_MULTIPLIER_GRID = (0.5, 1.0, 2.0)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read_config_file(path):
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(args, key, default=None, cast=str):
    """Flag > config file > default."""
    cli_value = getattr(args, key, None)
    if cli_value is not None:
        return cli_value
    config = getattr(args, "_config_values", {})
    if key in config:
        return cast(config[key])
    return default


def _parse_bandwidth(text):
    if text == "median":
        return ("median", 1.0)
    if text.startswith("medianx"):
        return ("median", float(text[len("medianx"):]))
    return ("absolute", float(text))


def _parse_kernel(text):
    """rbf | laplacian | product:<kind>,<kind>,... | additive:<kind>,<kind>,..."""
    if text in ("rbf", "laplacian"):
        return ("base", [text])
    for prefix in ("product:", "additive:"):
        if text.startswith(prefix):
            kinds = [k.strip() for k in text[len(prefix):].split(",") if k.strip()]
            if not kinds:
                raise UsageError(f"empty kernel list in {text!r}")
            for k in kinds:
                if k not in ("rbf", "laplacian"):
                    raise UsageError(f"unknown kernel kind {k!r}")
            return (prefix[:-1], kinds)
    raise UsageError(f"cannot parse kernel descriptor {text!r}")


def _parse_augment(text):
    if text in (None, "none"):
        return None, "none"
    if text.startswith("mask:"):
        rate = float(text[len("mask:"):])
        return (lambda X, rng: dio.augment_mask(X, rate, rng)), text
    if text.startswith("gauss:"):
        std = float(text[len("gauss:"):])
        return (lambda X, rng: dio.augment_gaussian(X, std, rng)), text
    raise UsageError(f"cannot parse augmentation {text!r}")


def _resolve_bandwidth(kind, bandwidth_spec, X, seed):
    mode, value = bandwidth_spec
    if mode == "absolute":
        return value
    metric = "l2" if kind == "rbf" else "l1"
    med = median_bandwidth(X, metric=metric, seed=derive_seed(seed, "median"))
    return value * med


def _build_kernel_spec(kernel_text, bandwidth_text, X, seed, features):
    """Resolve the CLI kernel descriptor into a spec object."""
    family, kinds = _parse_kernel(kernel_text)
    bandwidth_spec = _parse_bandwidth(bandwidth_text)
    resolved = [
        KernelSpec(kind, _resolve_bandwidth(kind, bandwidth_spec, X, seed))
        for kind in kinds
    ]
    if family == "base":
        return resolved[0]
    if family == "product":
        return ProductSpec(tuple(resolved))
    L = len(resolved)
    base, extra = divmod(features, L)
    if base == 0:
        raise UsageError(f"--features {features} too small for {L} additive terms")
    terms = tuple(
        (spec, 1.0 / L, base + (extra if i == L - 1 else 0))
        for i, spec in enumerate(resolved)
    )
    return AdditiveSpec(terms)


def _load_cli_dataset(args):
    path = _resolve(args, "data")
    if path is None:
        raise UsageError("--data is required")
    if not Path(path).exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    fmt = _resolve(args, "format", "csv")
    dataset = dio.load_dataset(path, format=fmt)
    if _resolve(args, "scale_unit", False, cast=lambda v: v == "true"):
        dataset = dio.scale_unit(dataset)
    return dataset


def _train_config(args, seed):
    return TrainConfig(
        step_size=_resolve(args, "step_size", 1e-1, cast=float),
        max_epochs=_resolve(args, "epochs", 20, cast=int),
        minibatch=_resolve(args, "minibatch", 1, cast=int),
        early_stop_patience=_resolve(args, "patience", 5, cast=int),
        heldout_fraction=_resolve(args, "heldout_frac", 0.1, cast=float),
        seed=seed,
    )


def _print_report(report: EvalReport):
    print(",".join(REPORT_HEADER))
    print(report.csv_row())


def _emit_history(histories, history_path):
    rows = []
    for block_index, history in enumerate(histories):
        for h in history:
            rows.append((block_index, h.epoch, h.train_loss, h.heldout_perplexity, h.heldout_accuracy))
    for row in rows:
        print("metric=block:%d,epoch:%d,train_loss:%.6f,heldout_perplexity:%.6f,heldout_accuracy:%.4f" % row)
    if history_path:
        with open(history_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["block", "epoch", "train_loss", "heldout_perplexity", "heldout_accuracy"])
            writer.writerows(rows)


def _train_additive(spec: AdditiveSpec, config, train_ds, held_ds, block_size, workers, augment):
    """Per-term ensembles plus learned logit scalings (the scalable route)."""
    ensembles, histories = [], []
    for i, (kernel, _alpha, d_i) in enumerate(spec.terms):
        term_config = replace(config, seed=derive_seed(config.seed, "additive-term", i))
        ens, hist = train_blocks(
            term_config, kernel, train_ds.X, train_ds.y, held_ds.X, held_ds.y,
            d_i, min(block_size, d_i), workers=workers, augment=augment,
        )
        ensembles.append(ens)
        histories.extend(hist)
    held_logits = [e.predict_logits(held_ds.X) for e in ensembles]
    weights = learn_combination_weights(held_logits, held_ds.y)
    return CombinedModel(models=ensembles, weights=weights.betas), histories


def cmd_train(args) -> int:
    seed = _resolve(args, "seed", 0, cast=int)
    dataset = _load_cli_dataset(args)
    features = _resolve(args, "features", 2000, cast=int)
    block_size = _resolve(args, "block_size", features, cast=int)
    heldout_frac = _resolve(args, "heldout_frac", 0.1, cast=float)
    train_ds, held_ds = dio.split(dataset, heldout_frac, derive_seed(seed, "cli-split"))
    spec = _build_kernel_spec(
        _resolve(args, "kernel", "rbf"),
        _resolve(args, "bandwidth", "median"),
        train_ds.X, seed, features,
    )
    augment, augment_name = _parse_augment(_resolve(args, "augment"))
    workers = _resolve(args, "workers", 1, cast=int)
    config = _train_config(args, seed)

    plan = partition(features, block_size, seed)
    print(f"plan: kernel={_resolve(args, 'kernel', 'rbf')} spec={spec} "
          f"features={features} blocks={len(plan)} block_sizes={[c for _, c, _ in plan]} "
          f"block_seeds={[s for _, _, s in plan]} augment={augment_name}")
    if args.dry_run:
        return EXIT_OK

    if isinstance(spec, AdditiveSpec):
        model, histories = _train_additive(
            spec, config, train_ds, held_ds, block_size, workers, augment
        )
    else:
        model, histories = train_blocks(
            config, spec, train_ds.X, train_ds.y, held_ds.X, held_ds.y,
            features, block_size, workers=workers, augment=augment,
        )
    _emit_history(histories, _resolve(args, "history"))
    out = _resolve(args, "out")
    if out:
        save_model(out, model)
        print(f"saved model to {out}")
    _print_report(evaluate(model, held_ds, model_id=Path(out).stem if out else "trained"))
    return EXIT_OK


def cmd_tune(args) -> int:
    seed = _resolve(args, "seed", 0, cast=int)
    dataset = _load_cli_dataset(args)
    heldout_frac = _resolve(args, "heldout_frac", 0.1, cast=float)
    train_ds, held_ds = dio.split(dataset, heldout_frac, derive_seed(seed, "cli-split"))
    kernel_text = _resolve(args, "kernel", "rbf")
    features = _resolve(args, "tune_features", 2000, cast=int)
    steps = [float(v) for v in _resolve(args, "grid_steps", "").split(",") if v] or list(STEP_SIZE_GRID)
    mults = [float(v) for v in _resolve(args, "grid_multipliers", "").split(",") if v] or list(BANDWIDTH_MULTIPLIER_GRID)
    if not steps or not mults:
        raise UsageError("tuning grid is empty")

    rows = []
    for mult in mults:
        spec = _build_kernel_spec(kernel_text, f"medianx{mult}", train_ds.X, seed, features)
        for step in steps:
            config = replace(_train_config(args, seed), step_size=step)
            if isinstance(spec, AdditiveSpec):
                model, _ = _train_additive(spec, config, train_ds, held_ds, features, 1, None)
            else:
                model, _ = train_blocks(
                    config, spec, train_ds.X, train_ds.y, held_ds.X, held_ds.y,
                    features, features,
                )
            report = evaluate(model, held_ds)
            rows.append((mult, step, report.perplexity, report.accuracy))
    rows.sort(key=lambda r: (r[2], r[1]))
    print("bandwidth_multiplier,step_size,heldout_perplexity,heldout_accuracy")
    for row in rows:
        print("%g,%g,%r,%r" % row)
    out = _resolve(args, "out")
    if out:
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bandwidth_multiplier", "step_size", "heldout_perplexity", "heldout_accuracy"])
            writer.writerows(rows)
    best = rows[0]
    print(f"selected: bandwidth_multiplier={best[0]:g} step_size={best[1]:g}")
    return EXIT_OK


def _load_predictor(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"model file not found: {path}")
    artifact = load_model(path)
    if not isinstance(artifact, (BlockEnsemble, CombinedModel)):
        raise UsageError(
            f"{path} holds a {type(artifact).__name__}; eval/predict need an "
            "ensemble or combined model (a bare classifier has no feature map)"
        )
    return artifact


def cmd_eval(args) -> int:
    dataset = _load_cli_dataset(args)
    model_path = _resolve(args, "model")
    if model_path is None:
        raise UsageError("--model is required")
    predictor = _load_predictor(model_path)
    _print_report(evaluate(predictor, dataset, model_id=Path(model_path).stem))
    return EXIT_OK


def cmd_predict(args) -> int:
    dataset = _load_cli_dataset(args)
    model_path = _resolve(args, "model")
    out = _resolve(args, "out")
    if model_path is None or out is None:
        raise UsageError("--model and --out are required")
    predictor = _load_predictor(model_path)
    logits = predictor.predict_logits(dataset.X)
    model_id = Path(model_path).stem
    if args.posteriors:
        export_logits(out, softmax(logits), model_id + ":posterior")
    else:
        export_logits(out, logits, model_id)
    print(f"wrote {'posteriors' if args.posteriors else 'logits'} to {out}")
    return EXIT_OK


def _scan_pair_weights(logit_sets, labels):
    """Grid scan over [0,1] in steps of 0.05 for two logit sets."""
    best = None
    for w in np.arange(0.0, 1.0001, 0.05):
        combined = combine_logits(logit_sets, np.array([w, 1.0 - w]))
        post = softmax(combined)
        key = (-accuracy(post, labels), perplexity(post, labels))
        if best is None or key < best[0]:
            best = (key, np.array([w, 1.0 - w]))
    return best[1]


def cmd_combine(args) -> int:
    dataset = _load_cli_dataset(args)
    paths = args.logits or []
    if len(paths) < 2:
        raise UsageError("combine needs at least two --logits files")
    sets, ids = [], []
    for p in paths:
        if not Path(p).exists():
            raise FileNotFoundError(f"logit file not found: {p}")
        logit, model_id = import_logits(p)
        if logit.shape[0] != dataset.num_samples:
            raise ValueError(
                f"{p} has {logit.shape[0]} rows but dataset has {dataset.num_samples}"
            )
        sets.append(logit)
        ids.append(model_id)
    weights_text = _resolve(args, "weights")
    if weights_text:
        weights = np.array([float(v) for v in weights_text.split(",")])
        if len(weights) != len(sets):
            raise UsageError(f"{len(sets)} logit files but {len(weights)} weights")
    elif args.learn:
        weights = learn_combination_weights(sets, dataset.y).betas
    else:
        if len(sets) != 2:
            raise UsageError("--scan handles exactly two logit files; use --learn for more")
        weights = _scan_pair_weights(sets, dataset.y)
    print("combination_weights=" + ",".join(f"{w:g}" for w in weights))
    post = softmax(combine_logits(sets, weights))
    report = EvalReport(
        perplexity=perplexity(post, dataset.y),
        accuracy=accuracy(post, dataset.y),
        num_samples=dataset.num_samples,
        num_classes=dataset.num_classes,
        model_id="+".join(ids),
        dataset_id=dataset.id,
    )
    _print_report(report)
    return EXIT_OK


def cmd_compose(args) -> int:
    seed = _resolve(args, "seed", 0, cast=int)
    dataset = _load_cli_dataset(args)
    heldout_frac = _resolve(args, "heldout_frac", 0.1, cast=float)
    train_ds, held_ds = dio.split(dataset, heldout_frac, derive_seed(seed, "cli-split"))
    features = _resolve(args, "features", 2000, cast=int)
    stage2_features = _resolve(args, "stage2_features", features, cast=int)
    bottleneck_dim = _resolve(args, "bottleneck_dim", None, cast=int)
    if bottleneck_dim is None:
        bottleneck_dim = min(100, features)
    mode = _resolve(args, "bottleneck", "pca_features")
    stage2_kind = _resolve(args, "stage2_kernel", "rbf")
    config = _train_config(args, seed)

    spec = _build_kernel_spec(
        _resolve(args, "kernel", "rbf"), _resolve(args, "bandwidth", "median"),
        train_ds.X, seed, features,
    )
    if not isinstance(spec, KernelSpec):
        raise UsageError("compose stage-1 kernel must be a base kernel")

    # stage-1 baseline: single-block ensemble on the same budget
    stage1_model, _ = train_blocks(
        config, spec, train_ds.X, train_ds.y, held_ds.X, held_ds.y, features, features
    )
    print("stage1:")
    _print_report(evaluate(stage1_model, held_ds, model_id="stage1"))

    composite = compose_pipeline(
        spec, features, mode, bottleneck_dim, stage2_kind, stage2_features,
        train_ds.X, seed, y=train_ds.y, train_config=config,
    )
    z_train = composite.transform(train_ds.X)
    z_held = composite.transform(held_ds.X)
    model, _ = mlr.train(config, z_train, train_ds.y, z_held, held_ds.y)
    post = mlr.posterior(model, z_held)
    report = EvalReport(
        perplexity=perplexity(post, held_ds.y),
        accuracy=accuracy(post, held_ds.y),
        num_samples=held_ds.num_samples,
        num_classes=held_ds.num_classes,
        model_id="composite",
        dataset_id=held_ds.id,
    )
    print("composite:")
    _print_report(report)
    out = _resolve(args, "out")
    if out:
        export_logits(out, mlr.logits(model, z_held), "composite")
        print(f"wrote composite held-out logits to {out}")
    return EXIT_OK


def _add_common(parser):
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--data", help="dataset path")
    parser.add_argument("--format", choices=["csv", "svmlight", "dense_binary"])
    parser.add_argument("--scale-unit", dest="scale_unit", action="store_const", const=True,
                        help="divide features by 256 before use")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--heldout-frac", dest="heldout_frac", type=float)
    parser.add_argument("--out")


def _add_train_options(parser):
    parser.add_argument("--kernel")
    parser.add_argument("--bandwidth")
    parser.add_argument("--features", type=int)
    parser.add_argument("--block-size", dest="block_size", type=int)
    parser.add_argument("--step-size", dest="step_size", type=float)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--minibatch", type=int)
    parser.add_argument("--patience", type=int)
    parser.add_argument("--augment")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--history", help="write per-epoch history CSV here")
    parser.add_argument("--dry-run", dest="dry_run", action="store_true")


def build_parser():
    parser = _Parser(prog="rfkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a block ensemble")
    _add_common(p)
    _add_train_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tune", help="grid search bandwidth multipliers and step sizes")
    _add_common(p)
    _add_train_options(p)
    p.add_argument("--tune-features", dest="tune_features", type=int)
    p.add_argument("--grid-steps", dest="grid_steps")
    p.add_argument("--grid-multipliers", dest="grid_multipliers")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("eval", help="evaluate a saved model on a dataset")
    _add_common(p)
    p.add_argument("--model")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write logit (or posterior) files")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--posteriors", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("combine", help="fuse logit files by weighted sum")
    _add_common(p)
    p.add_argument("--logits", nargs="+")
    p.add_argument("--weights")
    p.add_argument("--learn", action="store_true",
                   help="learn weights by likelihood maximization instead of scanning")
    p.set_defaults(func=cmd_combine)

    p = sub.add_parser("compose", help="two-stage composite kernel pipeline")
    _add_common(p)
    _add_train_options(p)
    p.add_argument("--bottleneck", choices=["pca_features", "pca_logposteriors"])
    p.add_argument("--bottleneck-dim", dest="bottleneck_dim", type=int)
    p.add_argument("--stage2-kernel", dest="stage2_kernel", choices=["rbf", "laplacian"])
    p.add_argument("--stage2-features", dest="stage2_features", type=int)
    p.set_defaults(func=cmd_compose)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args._config_values = _read_config_file(args.config) if args.config else {}
        if not hasattr(args, "dry_run"):
            args.dry_run = False
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry points.

Subcommands: generate, preprocess, pseudolabel {iforest,ae}, train,
evaluate, mcnemar, agreement, run, compare. Output paths are resolved
under $BILLINGLAB_OUT when set (absolute paths are left alone). Exit
code is 0 on success; failures print the failing stage to stderr and
exit 1.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import autoencoder as ae_mod
from . import classify, datagen, experiment, iforest, metrics, preprocess
from .errors import ArgumentError, BillingLabError


def _out_path(raw: str) -> Path:
    path = Path(raw)
    root = os.environ.get("BILLINGLAB_OUT")
    if root and not path.is_absolute():
        path = Path(root) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _out_dir(raw: str) -> Path:
    path = Path(raw)
    root = os.environ.get("BILLINGLAB_OUT")
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


# ----------------------------------------------------------------------

def cmd_generate(args) -> int:
    mix = dict(datagen.DEFAULT_ANOMALY_MIX) if args.mix is None else json.loads(args.mix)
    config = datagen.GeneratorConfig(
        n_records=args.n,
        preset=args.preset,
        n_clients=args.n_clients,
        anomaly_rate=args.anomaly_rate,
        anomaly_mix=mix,
        seed=args.seed,
    )
    dataset = datagen.generate_dataset(config)
    out = _out_path(args.out)
    datagen.write_csv(dataset, out)
    for warning in dataset.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"wrote {len(dataset)} rows ({dataset.n_anomalies} anomalies) to {out}")
    return 0


def cmd_preprocess(args) -> int:
    fractions = tuple(float(p) / 100.0 for p in args.split.split("/"))
    dataset = preprocess.clean(datagen.read_csv(args.infile))
    features = preprocess.build_features(dataset)
    ranges = preprocess.chronological_split(features.n_rows, fractions)
    scaler = preprocess.fit_scaler(features, rows=slice(0, ranges[0].stop))
    matrix = preprocess.apply_scaler(features, scaler)
    out = _out_dir(args.out_dir)
    names = ["train", "val", "test"][: len(ranges)]
    for name, rows in zip(names, ranges):
        preprocess.write_features(matrix.rows(slice(rows.start, rows.stop)), out / f"features_{name}.csv")
    labels = dataset.anomaly_labels
    with open(out / "labels_ground_truth.csv", "w") as fh:
        fh.write("row_index,label\n")
        for i, v in enumerate(labels):
            fh.write(f"{i},{int(v)}\n")
    meta = {
        "n_rows": features.n_rows,
        "split": args.split,
        "boundaries": [[r.start, r.stop] for r in ranges],
        "window": args.window,
        "preset": dataset.preset,
    }
    with open(out / "splits.json", "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    print(f"wrote feature splits for {features.n_rows} rows to {out}")
    return 0


def _fit_rows(n: int, args) -> int:
    if getattr(args, "fit_all", False):
        return n
    return int(math.floor(args.fit_fraction * n))


def cmd_pseudolabel_iforest(args) -> int:
    matrix = preprocess.read_features(args.infile)
    fit_end = _fit_rows(matrix.n_rows, args)
    model = iforest.fit_iforest(
        matrix.values[:fit_end],
        n_estimators=args.trees,
        subsample_fraction=args.subsample,
        max_features=args.max_features,
        bootstrap=args.bootstrap,
        contamination=args.contamination,
        seed=args.seed,
    )
    head = iforest.pseudo_label_iforest(model, matrix.values[:fit_end])
    if fit_end < matrix.n_rows:
        tail = iforest.pseudo_label_iforest(model, matrix.values[fit_end:])
        labels = iforest.PseudoLabelSet(
            scores=np.concatenate([head.scores, tail.scores]),
            labels=np.concatenate([head.labels, tail.labels]),
            threshold=model.threshold,
            source="iforest",
            warning=head.warning,
        )
    else:
        labels = head
    out = _out_path(args.out)
    experiment.write_labels_csv(labels, out)
    if args.model_out:
        iforest.save_model(model, _out_path(args.model_out))
    if labels.warning:
        print(f"warning: {labels.warning}", file=sys.stderr)
    print(f"labeled {labels.n_positive} of {matrix.n_rows} rows; threshold {model.threshold!r}")
    return 0


def cmd_pseudolabel_ae(args) -> int:
    matrix = preprocess.read_features(args.infile)
    fit_end = _fit_rows(matrix.n_rows, args)
    # rescale every column into [0, 1] on the fit rows; the sigmoid
    # decoder cannot reach the cyclic columns' negative half otherwise
    scaler = preprocess.fit_scaler(
        matrix, rows=slice(0, fit_end), columns=list(matrix.column_names)
    )
    scaled = preprocess.apply_scaler(matrix, scaler)
    model = ae_mod.fit_ae(
        scaled.values[:fit_end],
        preset=args.preset,
        seed=args.seed,
        max_epochs=args.epochs,
        threshold_percentile=args.percentile,
    )
    labels = ae_mod.pseudo_label_ae(model, scaled.values)
    out = _out_path(args.out)
    experiment.write_labels_csv(labels, out)
    if args.model_out:
        ae_mod.save_model(model, _out_path(args.model_out))
    print(
        f"labeled {labels.n_positive} of {matrix.n_rows} rows; "
        f"error threshold {model.error_threshold!r}"
    )
    return 0


def cmd_train(args) -> int:
    overrides = {}
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
    config = experiment.ExperimentConfig.from_json(
        {
            **overrides,
            "preset": args.preset,
            "label_source": args.labels,
            "model": args.model,
            "seeds": [args.seed],
            "out_dir": str(_out_dir(args.out)),
        }
    )
    run_dir = experiment.run_experiment(config)
    print(f"trained {args.model} on {args.labels} labels; artifacts in {run_dir}")
    return 0


def cmd_evaluate(args) -> int:
    actual = experiment.read_label_column(args.actual)
    reports = {}
    for path in args.preds:
        predicted = experiment.read_label_column(path)
        reports[Path(path).stem] = metrics.compute_metrics(predicted, actual)
    table = metrics.metrics_table(reports)
    print(table, end="")
    if args.out:
        out = _out_dir(args.out)
        with open(out / "evaluation.json", "w") as fh:
            json.dump({k: r.to_json() for k, r in reports.items()}, fh, indent=1, sort_keys=True)
        (out / "evaluation.txt").write_text(table)
    return 0


def cmd_mcnemar(args) -> int:
    result = metrics.mcnemar(
        experiment.read_label_column(args.a),
        experiment.read_label_column(args.b),
        experiment.read_label_column(args.actual),
    )
    print(metrics.mcnemar_table(result), end="")
    if args.out:
        with open(_out_path(args.out), "w") as fh:
            json.dump(result.to_json(), fh, indent=1, sort_keys=True)
    return 0


def cmd_agreement(args) -> int:
    report = metrics.agreement_report(
        experiment.read_label_column(args.iforest),
        experiment.read_label_column(args.ae),
    )
    print(metrics.agreement_table(report), end="")
    if args.out:
        with open(_out_path(args.out), "w") as fh:
            json.dump(report.to_json(), fh, indent=1, sort_keys=True)
    return 0


def cmd_run(args) -> int:
    config = experiment.ExperimentConfig.load(args.config)
    out_dir = _out_dir(args.out) if args.out else None
    run_dir = experiment.run_experiment(config, out_dir=out_dir)
    print((run_dir / "aggregate_report.txt").read_text(), end="")
    print(f"run complete: {run_dir}")
    return 0


def cmd_compare(args) -> int:
    result = experiment.compare(args.a, args.b)
    print(experiment.compare_table(result), end="")
    if args.out:
        with open(_out_path(args.out), "w") as fh:
            json.dump(result, fh, indent=1, sort_keys=True)
    return 0


# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="billinglab",
        description="Semi-supervised anomaly-detection laboratory for synthetic billing data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic billing dataset CSV")
    p.add_argument("--preset", choices=datagen.PRESETS, default="declaration")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--anomaly-rate", type=float, default=0.016)
    p.add_argument("--n-clients", type=int, default=20)
    p.add_argument("--mix", help="JSON object of injector weights")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("preprocess", help="clean, encode, scale, and split a dataset")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--split", default="60/20/20")
    p.add_argument("--window", type=int, default=100)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("pseudolabel", help="unsupervised pseudo-labeling")
    labeler = p.add_subparsers(dest="labeler", required=True)

    pi = labeler.add_parser("iforest", help="isolation-forest pseudo-labels")
    pi.add_argument("--in", dest="infile", required=True)
    pi.add_argument("--contamination", type=float, default=0.016)
    pi.add_argument("--trees", type=int, default=50)
    pi.add_argument("--subsample", type=float, default=0.90)
    pi.add_argument("--max-features", type=float, default=0.10)
    pi.add_argument("--bootstrap", action="store_true")
    pi.add_argument("--fit-fraction", type=float, default=0.8)
    pi.add_argument("--fit-all", action="store_true", help="fit on every row instead of the 80%% head")
    pi.add_argument("--seed", type=int, default=0)
    pi.add_argument("--out", required=True)
    pi.add_argument("--model-out")
    pi.set_defaults(func=cmd_pseudolabel_iforest)

    pa = labeler.add_parser("ae", help="autoencoder pseudo-labels")
    pa.add_argument("--in", dest="infile", required=True)
    pa.add_argument("--preset", choices=datagen.PRESETS, default="declaration")
    pa.add_argument("--percentile", type=float, default=98.4)
    pa.add_argument("--epochs", type=int, default=50)
    pa.add_argument("--fit-fraction", type=float, default=0.8)
    pa.add_argument("--fit-all", action="store_true")
    pa.add_argument("--seed", type=int, default=0)
    pa.add_argument("--out", required=True)
    pa.add_argument("--model-out")
    pa.set_defaults(func=cmd_pseudolabel_ae)

    p = sub.add_parser("train", help="single-seed train/evaluate run")
    p.add_argument("--model", choices=experiment.MODELS, required=True)
    p.add_argument("--labels", choices=classify.LABEL_SOURCES, required=True)
    p.add_argument("--preset", choices=datagen.PRESETS, default="declaration")
    p.add_argument("--config", help="JSON file of ExperimentConfig overrides")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="confusion metrics for prediction files")
    p.add_argument("--preds", nargs="+", required=True)
    p.add_argument("--actual", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("mcnemar", help="paired McNemar test on two prediction files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--actual", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_mcnemar)

    p = sub.add_parser("agreement", help="pseudo-label agreement table")
    p.add_argument("--iforest", required=True)
    p.add_argument("--ae", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_agreement)

    p = sub.add_parser("run", help="full multi-seed experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="McNemar + side-by-side table for two runs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BillingLabError as exc:
        stage = args.command if args.command else "cli"
        print(f"{stage}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"{args.command}: missing file: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

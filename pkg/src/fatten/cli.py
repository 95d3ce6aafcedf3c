"""``fatten`` command line: one binary, one subcommand per pipeline stage.

Every stage reads and writes files under the experiment workdir::

    train.fatn, test.fatn       gen-data
    pretrained.fatc             pretrain
    model.fatc                  train
    transfer.fatn               transfer
    reports/table{1,2,3,5}.*    eval-transfer, eval-retrieval, eval-fewshot
    metrics/<stage>.jsonl       per-epoch losses of each training stage

Exit status is 0 on success, 1 for invalid input or configuration and 2 for
numerical or unexpected failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .binning import PoseBinning
from .checkpoint import load_checkpoint, save_checkpoint
from .config import default_config, load_config
from .datafile import import_csv, read_dataset, write_dataset
from .errors import ConfigError, FattenError, NumericsError, PrerequisiteError, ValidationError
from .evaluation import (EvalReport, few_shot_experiment, pose_error_histogram,
                         retrieval_table, transfer_accuracy)
from .gradcheck import run_gradcheck
from .manifold import SyntheticDataset, build_manifold, sample_dataset
from .model import FattenModel
from .training import pretrain_category_head, pretrain_pose_predictor, train_fatten

log = logging.getLogger("fatten")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """Usage errors are validation errors, so they exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


# -- shared helpers -----------------------------------------------------------

def _config(args):
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.manifold = replace(cfg.manifold, seed=args.seed)
        cfg.train = replace(cfg.train, seed=args.seed)
    if args.workdir is not None:
        cfg.workdir = args.workdir
    return cfg


def _require(path, command):
    path = Path(path)
    if not path.exists():
        raise PrerequisiteError(f"{path} not found; run `fatten {command}` first")
    return path


def _load_data(cfg, split):
    return read_dataset(_require(cfg.paths[split], "gen-data"))


def _load_model(cfg, which="model"):
    command = "train" if which == "model" else "pretrain"
    return load_checkpoint(_require(cfg.paths[which], command))


def _dump(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _write_metrics(cfg, stage, entries):
    root = Path(cfg.workdir) / "metrics"
    root.mkdir(parents=True, exist_ok=True)
    path = root / f"{stage}.jsonl"
    path.write_text("".join(_dump(e) + "\n" for e in entries))
    return path


def _write_report(cfg, table, report):
    root = cfg.paths["reports"]
    root.mkdir(parents=True, exist_ok=True)
    (root / f"table{table}.json").write_text(report.to_json())
    (root / f"table{table}.csv").write_text(report.table_csv(table))
    return root / f"table{table}.csv"


def _record_runtime(cfg, name, seconds):
    """Wall-clock times live in their own file so reports stay byte-stable."""
    path = cfg.paths["reports"] / "runtime.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    times = json.loads(path.read_text()) if path.exists() else {}
    times[name] = round(seconds, 3)
    path.write_text(json.dumps(times, indent=2, sort_keys=True) + "\n")
    print(f"{name}: {seconds:.1f}s", file=sys.stderr)


def _pose_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


# -- commands -----------------------------------------------------------------

def cmd_gen_data(args, cfg):
    root = Path(cfg.workdir)
    root.mkdir(parents=True, exist_ok=True)
    if args.csv_import:
        binning = PoseBinning(args.pose_lo, args.pose_hi, args.num_bins,
                              angular=not args.linear)
        ds = import_csv(args.csv_import, binning, split=args.split)
        out = Path(args.out) if args.out else cfg.paths[args.split]
        write_dataset(ds, out)
        print(f"imported {len(ds)} records (feature_dim {ds.feature_dim}) -> {out}")
        _print_counts(ds)
        return EXIT_OK
    spec = build_manifold(cfg.manifold)
    d = cfg.data
    train, test = sample_dataset(
        spec, (d.train_objects, d.test_objects), d.poses_per_object, balance=d.balance,
        split_seed=cfg.seed, pose_mode=d.pose_mode, jitter=d.jitter)
    for ds in (train, test):
        path = cfg.paths[ds.split]
        write_dataset(ds, path)
        print(f"{ds.split}: {len(ds)} records, feature_dim {ds.feature_dim}, "
              f"{path.stat().st_size} bytes -> {path}")
        _print_counts(ds)
    return EXIT_OK


def _print_counts(ds):
    counts = ds.cell_counts()
    print("class\\bin " + " ".join(f"{j:>4d}" for j in range(counts.shape[1])))
    for c, row in enumerate(counts):
        print(f"{c:>9d} " + " ".join(f"{v:>4d}" for v in row))


def cmd_pretrain(args, cfg):
    train, test = _load_data(cfg, "train"), _load_data(cfg, "test")
    model = FattenModel.create(train.binning, train.feature_dim, train.num_classes,
                               seed=cfg.seed, **vars(cfg.model))
    start = time.perf_counter()
    entries = []
    _, pose_report = pretrain_pose_predictor(model, train, cfg.train, test, entries.append)
    _, cat_report = pretrain_category_head(model, train, cfg.train, test, entries.append)
    entries.append({"stage": "pose", "final": pose_report.metrics})
    entries.append({"stage": "category", "final": cat_report.metrics})
    _write_metrics(cfg, "pretrain", entries)
    save_checkpoint(model, cfg.paths["pretrained"])
    print(f"pose predictor: train {100 * pose_report.metrics['train_accuracy']:.2f}% "
          f"test {100 * pose_report.metrics['test_accuracy']:.2f}%")
    print(f"category head:  train {100 * cat_report.metrics['train_accuracy']:.2f}% "
          f"test {100 * cat_report.metrics['test_accuracy']:.2f}%")
    _record_runtime(cfg, "pretrain", time.perf_counter() - start)
    return EXIT_OK


def cmd_train(args, cfg):
    train, test = _load_data(cfg, "train"), _load_data(cfg, "test")
    if args.warm_start:
        model = _load_model(cfg, "model")
    else:
        model = _load_model(cfg, "pretrained")
    overrides = {k: v for k, v in (("epochs", args.epochs), ("lr", args.lr)) if v is not None}
    tc = replace(cfg.train, **overrides)
    start = time.perf_counter()
    entries = []
    model, report = train_fatten(model, train, tc, test, entries.append)
    entries.append({"stage": "transfer", "final": report.metrics})
    _write_metrics(cfg, "train", entries)
    save_checkpoint(model, cfg.paths["model"])
    m = report.metrics
    print(f"generated features: pose {m['pose_accuracy']:.2f}% "
          f"category {m['category_accuracy']:.2f}% "
          f"(real: {m['real_pose_accuracy']:.2f}% / {m['real_category_accuracy']:.2f}%)")
    _record_runtime(cfg, "train", time.perf_counter() - start)
    return EXIT_OK


def transfer_dataset(model, ds, target_bins=None, target_poses=None, identity=False):
    """Transfer every record of ``ds``; returns a dataset of synthesized features.

    Exactly one target mode applies: ``identity`` (each record to its own
    cell), explicit pose values, or cell indices (default: every cell).
    Rows are ordered source-major.
    """
    binning = model.binning
    if identity:
        src = np.arange(len(ds))
        bins = ds.pose_bins
        values = ds.pose_values
    else:
        if target_poses is not None:
            tvals = np.asarray(target_poses, dtype=np.float64)
            tbins = binning.encode_many(tvals)
        else:
            tbins = (np.arange(binning.num_cells) if target_bins is None
                     else np.asarray(target_bins, dtype=np.int64))
            if tbins.size and (tbins.min() < 0 or tbins.max() >= binning.num_cells):
                raise ConfigError(f"target bins must lie in [0, {binning.num_cells})")
            tvals = binning.centroids[tbins]
        src = np.repeat(np.arange(len(ds)), len(tbins))
        bins = np.tile(tbins, len(ds))
        values = np.tile(tvals, len(ds))
    out = np.empty((len(src), ds.feature_dim))
    for i in range(0, len(src), 4096):
        sl = slice(i, i + 4096)
        out[sl] = model.transfer(ds.features[src[sl]], bins[sl])
    return SyntheticDataset(out, values, bins, ds.class_labels[src], ds.object_ids[src],
                            binning, ds.num_classes, ds.split, None), src


def cmd_transfer(args, cfg):
    model = _load_model(cfg)
    ds = read_dataset(args.input) if args.input else _load_data(cfg, "test")
    if ds.feature_dim != model.dims.feature_dim:
        raise ConfigError(f"input feature_dim {ds.feature_dim} != model "
                          f"{model.dims.feature_dim}")
    if args.target_pose is not None:
        poses = _pose_list(args.target_pose)
        out, src = transfer_dataset(model, ds, target_poses=poses)
    elif args.identity:
        out, src = transfer_dataset(model, ds, identity=True)
    else:
        out, src = transfer_dataset(model, ds, target_bins=args.target_bin)
    path = Path(args.out) if args.out else Path(cfg.workdir) / "transfer.fatn"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, path)
    x = ds.features[src]
    rel = np.linalg.norm(out.features - x, axis=1) / np.maximum(np.linalg.norm(x, axis=1), 1e-12)
    print(f"wrote {len(out)} synthesized features -> {path}")
    print(f"median relative change |x_hat - x| / |x|: {np.median(rel):.4f}")
    return EXIT_OK


def _eval_transfer(cfg):
    model, test = _load_model(cfg), _load_data(cfg, "test")
    return EvalReport(histogram=pose_error_histogram(model, test),
                      transfer=transfer_accuracy(model, test))


def _eval_retrieval(cfg, args):
    model, test = _load_model(cfg), _load_data(cfg, "test")
    lam = cfg.eval.lam if getattr(args, "lam", None) is None else args.lam
    queries = cfg.eval.retrieval_queries
    if getattr(args, "max_queries", None) is not None:
        queries = args.max_queries
    return EvalReport(retrieval=retrieval_table(model, test, lam, queries, cfg.seed))


def _eval_fewshot(cfg, args):
    model, test = _load_model(cfg), _load_data(cfg, "test")
    ev = cfg.eval
    overrides = {}
    for name in ("shots", "repetitions"):
        if getattr(args, name, None) is not None:
            overrides[name] = getattr(args, name)
    if getattr(args, "targets", None) is not None:
        overrides["targets"] = _pose_list(args.targets)
    fc = replace(ev.fewshot(cfg.seed), **overrides)
    return EvalReport(fewshot=few_shot_experiment(model, test, fc))


def _run_tables(cfg, args, tables):
    written = []
    start = time.perf_counter()
    if 1 in tables or 2 in tables:
        report = _eval_transfer(cfg)
        for t in (1, 2):
            if t in tables:
                written.append(_write_report(cfg, t, EvalReport(
                    histogram=report.histogram if t == 1 else None,
                    transfer=report.transfer if t == 2 else None)))
    if 3 in tables:
        written.append(_write_report(cfg, 3, _eval_retrieval(cfg, args)))
    if 5 in tables:
        written.append(_write_report(cfg, 5, _eval_fewshot(cfg, args)))
    for path in written:
        print(f"== {path}")
        print(path.read_text(), end="")
    _record_runtime(cfg, "eval-" + "".join(str(t) for t in tables),
                    time.perf_counter() - start)
    return EXIT_OK


def cmd_eval_transfer(args, cfg):
    return _run_tables(cfg, args, (1, 2))


def cmd_eval_retrieval(args, cfg):
    return _run_tables(cfg, args, (3,))


def cmd_eval_fewshot(args, cfg):
    return _run_tables(cfg, args, (5,))


def cmd_eval(args, cfg):
    return _run_tables(cfg, args, tuple(args.table) if args.table else (1, 2, 3, 5))


def cmd_gradcheck(args, cfg):
    start = time.perf_counter()
    report = run_gradcheck(args.seeds, args.tolerance, corrupt=args.corrupt_grad)
    for name, err in report.errors.items():
        status = "ok" if err < args.tolerance else "FAIL"
        print(f"{name:40s} {err:.3e} {status}")
    verdict = "PASS" if report.passed else "FAIL"
    print(f"{verdict}: max relative error {report.max_error:.3e} "
          f"(tolerance {args.tolerance:g}, {args.seeds} seeds, "
          f"{time.perf_counter() - start:.1f}s)")
    if not report.passed:
        raise NumericsError(f"gradient check failed for {len(report.failures())} tensor(s)")
    return EXIT_OK


def cmd_pipeline(args, cfg):
    for step in (cmd_gen_data, cmd_pretrain, cmd_train):
        step(argparse.Namespace(csv_import=None, warm_start=False, epochs=None, lr=None), cfg)
    return _run_tables(cfg, argparse.Namespace(), (1, 2, 3, 5))


# -- argument parsing ---------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment INI file (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="master seed; overrides the config")
    common.add_argument("--workdir", help="directory holding datasets, checkpoints, reports")
    common.add_argument("-v", "--verbose", action="store_true", help="log per-epoch losses")

    parser = _Parser(prog="fatten", description="Feature-space pose transfer experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common],
                       help="sample train/test splits from the synthetic manifold")
    p.add_argument("--csv-import", metavar="CSV",
                   help="ingest external features (class,object,pose,f0,...) instead")
    p.add_argument("--out", help="output path for --csv-import")
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.add_argument("--num-bins", type=int, default=12)
    p.add_argument("--pose-lo", type=float, default=0.0)
    p.add_argument("--pose-hi", type=float, default=360.0)
    p.add_argument("--linear", action="store_true",
                   help="non-angular attribute (no wrap-around)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("pretrain", parents=[common],
                       help="train the pose predictor and the category head")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", parents=[common],
                       help="train the appearance encoder and decoder with frozen heads")
    p.add_argument("--warm-start", action="store_true",
                   help="continue from the trained checkpoint instead of the pre-trained one")
    p.add_argument("--epochs", type=int, help="override the configured epoch count")
    p.add_argument("--lr", type=float, help="override the configured learning rate")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", parents=[common],
                       help="synthesize features and export them as a dataset file")
    p.add_argument("--input", help="source dataset (default: the test split)")
    p.add_argument("--out", help="output dataset (default: <workdir>/transfer.fatn)")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--target-bin", type=int, action="append", metavar="J",
                      help="target cell index (repeatable)")
    mode.add_argument("--target-pose", metavar="V1,V2,...", help="target attribute values")
    mode.add_argument("--identity", action="store_true",
                      help="transfer each record to its own cell")
    mode.add_argument("--all-bins", action="store_true", help="every cell (the default)")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("eval-transfer", parents=[common],
                       help="pose-error histogram and generated-feature accuracy")
    p.set_defaults(func=cmd_eval_transfer)

    retrieval = argparse.ArgumentParser(add_help=False)
    retrieval.add_argument("--lam", type=float, help="weight of the pose distance in dc")
    retrieval.add_argument("--max-queries", type=int, help="subsample queries per feature set")
    p = sub.add_parser("eval-retrieval", parents=[common, retrieval],
                       help="retrieval mAP of real and generated features")
    p.set_defaults(func=cmd_eval_retrieval)

    fewshot = argparse.ArgumentParser(add_help=False)
    fewshot.add_argument("--shots", type=int)
    fewshot.add_argument("--repetitions", type=int)
    fewshot.add_argument("--targets", metavar="V1,V2,...",
                         help="augmentation pose values (empty string disables augmentation)")
    p = sub.add_parser("eval-fewshot", parents=[common, fewshot],
                       help="few-shot SVM baseline vs augmented")
    p.set_defaults(func=cmd_eval_fewshot)

    p = sub.add_parser("eval", parents=[common, retrieval, fewshot],
                       help="write one or more report tables")
    p.add_argument("--table", type=int, choices=(1, 2, 3, 5), action="append")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference check of every layer and the composed model")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--corrupt-grad", action="store_true",
                   help="inflate one analytic gradient to confirm the check fails")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("pipeline", parents=[common],
                       help="gen-data, pretrain, train and every evaluation in one go")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, _config(args))
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FattenError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the runtime status
        log.debug("unexpected failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

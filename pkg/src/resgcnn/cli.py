"""Command-line entry point: ``resgcnn {prepare,train,transfer,evaluate,synth,selfcheck}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure (divergence, failed self-check).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .archive import ArchiveError
from .data.loaders import DataError
from .data.prepared import PreparedDataset, from_windows, load_prepared, prepare, save_prepared
from .data.synthetic import synthetic_generate, synthetic_manifest
from .data.windows import Standardizer
from .evaluation import evaluate, serialize_report, write_confusion_csv
from .model import build_model, load_model, save_model
from .train import TrainingDiverged, encode_windows, fewshot_split, kfold_split, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("resgcnn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- data ------------------------------------------------------------------------------------------

def load_data(section: cfgmod.DataSection, seed: int, train_cfg, name: str | None = None) -> PreparedDataset:
    if section.prepared:
        try:
            return load_prepared(section.prepared)
        except FileNotFoundError as exc:
            raise DataError(f"prepared archive not found: {section.prepared}") from exc
        except (ArchiveError, KeyError, ValueError) as exc:
            raise DataError(f"{section.prepared}: {exc}") from exc
    if section.dataset == "synthetic":
        sample_seed = seed if section.sample_seed is None else section.sample_seed
        windows = synthetic_generate(section.num_classes, section.samples_per_class, section.channels,
                                     sample_seed, snr_db=section.snr_db, window_length=train_cfg.window_length,
                                     family_seed=section.family_seed, class_offset=section.class_offset,
                                     frequency_step=section.frequency_step)
        manifest = synthetic_manifest(section.num_classes, section.channels, name or "synthetic")
        for w in windows:
            w.dataset = manifest.dataset
        data = from_windows(windows, manifest, train_cfg.window_length, train_cfg.overlap_fraction)
        data.info = {"generator": {k: v for k, v in vars(section).items() if k not in ("path", "prepared",
                                                                                        "tnda_columns")}}
        return data
    if not section.path:
        raise UsageError(f"data.path is required for dataset {section.dataset!r}")
    options = {"max_gap": section.max_gap}
    if section.dataset == "tnda" and section.tnda_columns is not None:
        options["column_map"] = section.tnda_columns
    return prepare(section.dataset, section.path, train_cfg.window_length, train_cfg.overlap_fraction, **options)


def _summary(data: PreparedDataset) -> str:
    m = data.manifest
    counts = data.class_counts()
    lines = [f"dataset {m.dataset}: {m.num_channels} channels, {m.num_classes} labels, "
             f"{len(data)} segments (window {data.window_length}, overlap {data.overlap:g})"]
    for k, name in sorted(m.labels.items()):
        lines.append(f"  {k:>2} {name:<28} {counts.get(k, 0)}")
    return "\n".join(lines)


# --- commands ----------------------------------------------------------------------------------------

def cmd_prepare(cfg: cfgmod.RunConfig) -> int:
    data = load_data(cfg.data, cfg.seed, cfg.train)
    out = Path(cfg.out) / f"{data.manifest.dataset}.prepared.rga"
    save_prepared(data, out)
    print(_summary(data))
    print(f"segments: {len(data)}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_synth(cfg: cfgmod.RunConfig) -> int:
    section = replace(cfg.data, dataset="synthetic", prepared=None)
    return cmd_prepare(replace(cfg, data=section))


def _splits(cfg: cfgmod.RunConfig, labels: np.ndarray, num_classes: int):
    tc = cfg.train_config()
    if cfg.split == "fewshot":
        return [fewshot_split(labels, tc.train_fraction, tc.test_fraction, tc.seed, num_classes)]
    folds = kfold_split(len(labels), tc.folds, tc.seed)
    return folds[:1] if cfg.split == "single" else folds


def cmd_train(cfg: cfgmod.RunConfig) -> int:
    tc = cfg.train_config()
    data = load_data(cfg.data, cfg.seed, tc)
    out = Path(cfg.out)
    arch = cfg.arch
    if arch.input_width != data.window_length:
        raise UsageError(f"architecture input width {arch.input_width} != window length {data.window_length}")
    folds = _splits(cfg, data.labels, data.manifest.num_classes)
    summary = {"dataset": data.manifest.dataset, "split": cfg.split, "seed": cfg.seed, "folds": []}
    names = [data.manifest.labels[k] for k in sorted(data.manifest.labels)]
    for i, (tr, te) in enumerate(folds):
        fold_dir = out / f"fold{i}" if len(folds) > 1 else out
        std = Standardizer.fit(data.subset(tr))
        train_set = encode_windows(data.subset(tr), std, tc)
        test_set = encode_windows(data.subset(te), std, tc)
        model = build_model(data.manifest.num_classes, tc.seed, arch)
        model.meta.update({"dataset": data.manifest.dataset, "channel_count": data.manifest.num_channels,
                           "standardizer": {"mean": std.mean.tolist(), "std": std.std.tolist()},
                           "train_config": tc.to_dict()})
        try:
            params, curve = train(model, train_set, tc, test_set,
                                  on_epoch=lambda e, l, a, i=i: log.info("fold %d epoch %d loss %.6f acc %.2f",
                                                                         i, e, l, a))
        except TrainingDiverged as exc:
            raise TrainingDiverged(f"fold {i}: {exc}") from exc
        report = evaluate(params, test_set, class_names=names)
        save_model(params, fold_dir / "model.rga")
        curve.write(fold_dir / "curve.tsv")
        serialize_report(report, fold_dir / "report.json")
        write_confusion_csv(report, fold_dir / "confusion.csv")
        print(f"fold {i}: {len(tr)} train / {len(te)} test, epochs {len(curve)}, "
              f"accuracy {report.overall_accuracy:.2f}%, macro F1 {report.macro_f1:.2f}")
        summary["folds"].append({"fold": i, "train": len(tr), "test": len(te), "epochs": len(curve),
                                 "overall_accuracy": report.overall_accuracy, "macro_f1": report.macro_f1})
    accs = [f["overall_accuracy"] for f in summary["folds"]]
    summary["mean_accuracy"] = float(np.mean(accs))
    summary["mean_macro_f1"] = float(np.mean([f["macro_f1"] for f in summary["folds"]]))
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(f"mean accuracy {summary['mean_accuracy']:.2f}% over {len(folds)} split(s)")
    return EXIT_OK


def cmd_evaluate(cfg: cfgmod.RunConfig, model_path: str) -> int:
    try:
        params = load_model(model_path)
    except FileNotFoundError as exc:
        raise DataError(f"model archive not found: {model_path}") from exc
    except (ArchiveError, KeyError) as exc:
        raise DataError(f"{model_path}: {exc}") from exc
    tc = cfg.train_config()
    data = load_data(cfg.data, cfg.seed, tc)
    stats = params.meta.get("standardizer")
    std = Standardizer(np.array(stats["mean"]), np.array(stats["std"])) if stats else Standardizer.fit(data.windows)
    if len(std.mean) != data.manifest.num_channels:
        raise DataError(f"model expects {len(std.mean)} channels, data has {data.manifest.num_channels}")
    report = evaluate(params, encode_windows(data.windows, std, tc))
    out = Path(cfg.out)
    serialize_report(report, out / "report.json")
    write_confusion_csv(report, out / "confusion.csv")
    print(f"{report.sample_count} samples, accuracy {report.overall_accuracy:.2f}%, macro F1 {report.macro_f1:.2f}")
    return EXIT_OK


def _transfer_datasets(cfg: cfgmod.RunConfig, tc) -> dict[str, PreparedDataset]:
    sections = dict(cfg.datasets)
    if not sections:
        # a related synthetic pair: the three target classes are source classes 1-3, recorded
        # noisier; a shared frequency set leaves channel grouping as the only cue
        sections = {
            "synth-src": cfgmod.DataSection(num_classes=4, samples_per_class=80, class_offset=0,
                                            frequency_step=0, sample_seed=cfg.seed),
            "synth-tgt": cfgmod.DataSection(num_classes=3, class_offset=1, frequency_step=0, snr_db=2.0,
                                            sample_seed=cfg.seed + 1000),
        }
    return {name: load_data(sec, cfg.seed, tc, name) for name, sec in sections.items()}


def cmd_transfer(cfg: cfgmod.RunConfig) -> int:
    from .transfer import TransferPlan, run_fewshot_grid, run_transfer, write_cells, write_grid

    tc = cfg.train_config()
    ts = cfg.transfer
    datasets = _transfer_datasets(cfg, tc)
    names = list(datasets)
    source = ts.source or names[0]
    target = ts.target or (names[1] if len(names) > 1 else "")
    pairs = [(source, target)] + [tuple(p) for p in ts.plans]
    for s, t in pairs:
        for n in (s, t):
            if n not in datasets:
                raise UsageError(f"transfer refers to unknown dataset {n!r}; known: {names}")
    source_cfg = replace(tc, max_epochs=ts.source_max_epochs) if ts.source_max_epochs is not None else None
    plans = [TransferPlan(s, t, tc, source_cfg, ts.freeze_blocks, fewshot=ts.fewshot) for s, t in pairs]
    out = Path(cfg.out)
    if ts.mode == "grid":
        cells = run_fewshot_grid(plans, datasets, tuple(ts.fractions), tuple(ts.seeds), out, cfg.arch, cfg.jobs)
        write_grid(cells, out / "fewshot_table.tsv")
        write_cells(cells, out / "fewshot_cells.tsv")
        print((out / "fewshot_table.tsv").read_text(), end="")
        return EXIT_OK
    for plan in plans:
        res = run_transfer(plan, datasets[plan.source], datasets[plan.target], out, cfg.arch)
        print(f"{plan.tag}: transfer {res.report.overall_accuracy:.2f}% vs scratch "
              f"{res.baseline_report.overall_accuracy:.2f}% (block digest {res.block_digest[:12]})")
        print("  epoch  tf_acc  scratch_acc")
        for e, (a, b) in enumerate(zip(res.curve.test_accuracy, res.baseline_curve.test_accuracy)):
            print(f"  {e:>5}  {a:6.2f}  {b:6.2f}")
    return EXIT_OK


def cmd_selfcheck(cfg: cfgmod.RunConfig, instances: int, perturb: float) -> int:
    from .selfcheck import run_all

    results = run_all(instances, perturb, cfg.seed, log=print)
    ok = all(r.passed for r in results)
    print("selfcheck " + ("passed" if ok else "FAILED"))
    return EXIT_OK if ok else EXIT_NUMERIC


# --- argument parsing ------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON or YAML run configuration")
    common.add_argument("--seed", type=int, help="run seed [0]")
    common.add_argument("--out", metavar="DIR", help="output directory [runs]")
    common.add_argument("--jobs", type=int, help="parallel worker processes for the transfer grid [1]")
    common.add_argument("--dataset", choices=["pamap2", "mhealth", "tnda", "synthetic"],
                        help="dataset for prepare/train/evaluate [synthetic]")
    common.add_argument("--data-path", metavar="DIR", help="raw dataset directory (data.path)")
    common.add_argument("--prepared", metavar="PATH", help="prepared-dataset archive (data.prepared)")
    common.add_argument("-v", "--verbose", action="store_true", help="log every epoch")

    parser = _Parser(prog="resgcnn", description="Residual Chebyshev graph networks for activity recognition.",
                     epilog=cfgmod.describe(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = argparse.RawDescriptionHelpFormatter
    sub.add_parser("prepare", parents=[common], help="load, resample and segment a dataset into an archive",
                   epilog=cfgmod.describe(), formatter_class=fmt)
    sub.add_parser("train", parents=[common], help="train with k-fold, single or few-shot splits",
                   epilog=cfgmod.describe(), formatter_class=fmt)
    sub.add_parser("transfer", parents=[common], help="block transfer against a scratch baseline",
                   epilog=cfgmod.describe(), formatter_class=fmt)
    ev = sub.add_parser("evaluate", parents=[common], help="score a saved model on a dataset",
                        epilog=cfgmod.describe(), formatter_class=fmt)
    ev.add_argument("--model", required=True, metavar="PATH", help="model archive written by train")
    sub.add_parser("synth", parents=[common], help="write the synthetic dataset as a prepared archive",
                   epilog=cfgmod.describe(), formatter_class=fmt)
    sc = sub.add_parser("selfcheck", parents=[common], help="gradient, spectral, GraphNorm and metric checks")
    sc.add_argument("--instances", type=int, default=20, help="random models for the gradient check [20]")
    sc.add_argument("--perturb-gradient", type=float, default=0.0, metavar="REL",
                    help="scale analytic gradients by 1+REL before checking (harness test) [0]")
    return parser


def resolve_config(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.jobs is not None:
        if args.jobs < 1:
            raise cfgmod.ConfigError("--jobs must be >= 1")
        cfg.jobs = args.jobs
    if args.dataset is not None:
        cfg.data = replace(cfg.data, dataset=args.dataset)
    if args.data_path is not None:
        cfg.data = replace(cfg.data, path=args.data_path)
    if args.prepared is not None:
        cfg.data = replace(cfg.data, prepared=args.prepared)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "prepare":
            return cmd_prepare(cfg)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.model)
        if args.command == "transfer":
            return cmd_transfer(cfg)
        return cmd_selfcheck(cfg, args.instances, args.perturb_gradient)
    except (cfgmod.ConfigError, UsageError) as exc:
        print(f"resgcnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ArchiveError) as exc:
        print(f"resgcnn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"resgcnn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

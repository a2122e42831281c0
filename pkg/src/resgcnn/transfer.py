"""Cross-dataset block transfer and the few-shot comparison grid.

A transfer run trains a source model, exports its residual blocks,
imports them into a model with a fresh head for the target classes and
trains that on the target split. A scratch model with the same split,
seed and head initialization is trained alongside for comparison.
"""
from __future__ import annotations

import csv
import logging
import math
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data.prepared import PreparedDataset
from .data.windows import DatasetManifest, Standardizer, channel_index
from .evaluation import MetricsReport, evaluate, serialize_report
from .model import DEFAULT_ARCHITECTURE, Architecture, build_model, export_blocks, import_blocks, read_block_archive
from .train import LearningCurve, TrainConfig, encode_windows, fewshot_split, kfold_split, train

log = logging.getLogger(__name__)


class AlignmentError(ValueError):
    pass


@dataclass
class TransferPlan:
    source: str
    target: str
    target_config: TrainConfig = field(default_factory=TrainConfig)
    # None trains the source with target_config's settings
    source_config: TrainConfig | None = None
    freeze_blocks: bool = True
    alignment: str = "auto"  # "auto" or "none"
    tag: str = ""
    fewshot: bool = False

    def __post_init__(self):
        if self.source == self.target and not self.tag:
            raise ValueError("source and target must differ (set a tag to transfer within one dataset)")
        if self.alignment not in ("auto", "none"):
            raise ValueError("alignment must be 'auto' or 'none'")
        if not self.tag:
            self.tag = f"{self.source[:1].upper()}-to-{self.target[:1].upper()}"


@dataclass
class TransferResult:
    plan: TransferPlan
    report: MetricsReport
    curve: LearningCurve
    baseline_report: MetricsReport
    baseline_curve: LearningCurve
    source_curve: LearningCurve
    train_indices: np.ndarray
    test_indices: np.ndarray
    block_digest: str = ""


def align_pair(source: PreparedDataset, target: PreparedDataset) -> tuple[PreparedDataset, PreparedDataset]:
    """Reduce both datasets to the smaller of the two channel lists.

    The dataset with fewer channels defines the shared order; the other
    must contain every one of its channels (chest and back count as the
    same location).
    """
    if [c.key() for c in source.manifest.channels] == [c.key() for c in target.manifest.channels]:
        return source, target
    small, large = ((source, target) if source.manifest.num_channels <= target.manifest.num_channels
                    else (target, source))
    shared = DatasetManifest(small.manifest.dataset, list(small.manifest.channels), dict(small.manifest.labels))
    try:
        channel_index(large.manifest, shared)
        channel_index(small.manifest, shared)
    except ValueError as exc:
        raise AlignmentError(str(exc)) from exc
    return source.aligned(shared), target.aligned(shared)


def _shared_channels(source: DatasetManifest, target: DatasetManifest, plan: TransferPlan) -> tuple:
    # the target channel list a run will see after alignment
    if plan.alignment == "auto" and source.num_channels < target.num_channels:
        return tuple(c.key() for c in source.channels)
    return tuple(c.key() for c in target.channels)


def _target_split(plan: TransferPlan, labels: np.ndarray, num_classes: int):
    cfg = plan.target_config
    if plan.fewshot:
        return fewshot_split(labels, cfg.train_fraction, cfg.test_fraction, cfg.seed, num_classes)
    return kfold_split(len(labels), cfg.folds, cfg.seed)[0]


def train_source(data: PreparedDataset, config: TrainConfig, arch: Architecture = DEFAULT_ARCHITECTURE):
    """Train on the whole source dataset; returns ``(params, curve)``."""
    std = Standardizer.fit(data.windows)
    encoded = encode_windows(data.windows, std, config)
    model = build_model(data.manifest.num_classes, config.seed, arch)
    model.meta["channel_count"] = data.manifest.num_channels
    return train(model, encoded, replace(config, freeze_blocks=False))


def _digest(tensors: dict) -> str:
    import hashlib

    h = hashlib.sha256()
    for name in sorted(tensors):
        h.update(name.encode())
        h.update(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes())
    return h.hexdigest()


def run_transfer(plan: TransferPlan, source_data: PreparedDataset, target_data: PreparedDataset,
                 out_dir=None, arch: Architecture = DEFAULT_ARCHITECTURE, source_blocks=None,
                 baseline: tuple[MetricsReport, LearningCurve] | None = None) -> TransferResult:
    """Source training, block export/import, target training and the scratch baseline.

    ``source_blocks`` may supply an already exported ``(header, tensors)``
    pair (skipping source training); ``baseline`` may supply a scratch
    result computed earlier on the identical split.
    """
    if plan.alignment == "auto":
        source_data, target_data = align_pair(source_data, target_data)
    elif source_data.manifest.num_channels != target_data.manifest.num_channels:
        raise AlignmentError("channel counts differ and alignment is disabled")
    cfg = plan.target_config
    out = Path(out_dir) if out_dir is not None else None

    source_curve = LearningCurve()
    if source_blocks is None:
        src_params, source_curve = train_source(source_data, plan.source_config or cfg, arch)
        with tempfile.TemporaryDirectory() as tmp:
            path = export_blocks(src_params, Path(tmp) / "blocks.rga", source_data.manifest.num_channels)
            source_blocks = read_block_archive(path)
            if out is not None:
                out.mkdir(parents=True, exist_ok=True)
                (out / f"{plan.source}_blocks_s{cfg.seed}.rga").write_bytes(path.read_bytes())

    c = target_data.manifest.num_classes
    train_idx, test_idx = _target_split(plan, target_data.labels, c)
    std = Standardizer.fit(target_data.subset(train_idx))
    train_set = encode_windows(target_data.subset(train_idx), std, cfg)
    test_set = encode_windows(target_data.subset(test_idx), std, cfg)

    model = import_blocks(source_blocks, c, cfg.seed, arch)
    tuned, curve = train(model, train_set, replace(cfg, freeze_blocks=plan.freeze_blocks), test_set)
    report = evaluate(tuned, test_set)

    if baseline is None:
        scratch, base_curve = train(build_model(c, cfg.seed, arch), train_set, replace(cfg, freeze_blocks=False),
                                    test_set)
        baseline = (evaluate(scratch, test_set), base_curve)

    result = TransferResult(plan, report, curve, baseline[0], baseline[1], source_curve, train_idx, test_idx,
                            _digest(tuned.block_tensors()))
    if out is not None:
        write_result(result, out)
    return result


def run_name(plan: TransferPlan, kind: str) -> str:
    cfg = plan.target_config
    frac = f"f{cfg.train_fraction:g}" if plan.fewshot else "full"
    return f"{plan.source}_{plan.target}_{frac}_s{cfg.seed}_{kind}"


def write_result(result: TransferResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for kind, rep, curve in (("tf", result.report, result.curve),
                             ("scratch", result.baseline_report, result.baseline_curve)):
        name = run_name(result.plan, kind)
        curve.write(out / f"{name}.curve.tsv")
        serialize_report(rep, out / f"{name}.report.json")


# --- few-shot grid ------------------------------------------------------------------------------

@dataclass
class GridCell:
    tag: str
    source: str
    target: str
    fraction: float
    seed: int
    non_tf: float
    tf: float


def _cell_job(args):
    plan, datasets, arch, blocks, baseline, out_dir = args
    return run_transfer(plan, datasets[plan.source], datasets[plan.target], out_dir, arch, blocks, baseline)


def run_fewshot_grid(plans: list[TransferPlan], datasets: dict[str, PreparedDataset],
                     fractions=(0.05, 0.025), seeds=(0,), out_dir=None, arch: Architecture = DEFAULT_ARCHITECTURE,
                     jobs: int = 1) -> list[GridCell]:
    """Every plan at every train fraction and seed; returns one cell per run.

    One source model is trained per (source, target, seed) and reused
    across fractions. Cells run in a deterministic order; with
    ``jobs > 1`` they are farmed out to worker processes and collected in
    that same order.
    """
    blocks: dict[tuple, tuple] = {}
    for plan in plans:
        for seed in seeds:
            key = (plan.source, plan.target, seed)
            if key in blocks:
                continue
            src, tgt = datasets[plan.source], datasets[plan.target]
            if plan.alignment == "auto":
                src, _ = align_pair(src, tgt)
            cfg = replace(plan.source_config or plan.target_config, seed=seed)
            params, _ = train_source(src, cfg, arch)
            with tempfile.TemporaryDirectory() as tmp:
                blocks[key] = read_block_archive(export_blocks(params, Path(tmp) / "b.rga",
                                                               src.manifest.num_channels))

    tasks = []
    for plan in plans:
        for fraction in fractions:
            for seed in seeds:
                cfg = replace(plan.target_config, train_fraction=fraction, seed=seed)
                cell_plan = replace(plan, target_config=cfg, fewshot=True)
                tasks.append((cell_plan, datasets, arch, blocks[(plan.source, plan.target, seed)], None,
                              out_dir))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cell_job, tasks))
    else:
        results = []
        baselines: dict[tuple, tuple] = {}
        for task in tasks:
            plan = task[0]
            # scratch runs depend only on the target split, so rows sharing a target reuse them
            key = (plan.target, plan.target_config.train_fraction, plan.target_config.seed,
                   _shared_channels(datasets[plan.source].manifest, datasets[plan.target].manifest, plan))
            res = _cell_job(task[:4] + (baselines.get(key),) + task[5:])
            baselines.setdefault(key, (res.baseline_report, res.baseline_curve))
            results.append(res)
    return [GridCell(r.plan.tag, r.plan.source, r.plan.target, r.plan.target_config.train_fraction,
                     r.plan.target_config.seed, r.baseline_report.overall_accuracy, r.report.overall_accuracy)
            for r in results]


def grid_table(cells: list[GridCell]) -> tuple[list[str], list[list]]:
    """Table rows per setting with Non-TF/TF columns per fraction, averaged over seeds."""
    fractions = sorted({c.fraction for c in cells}, reverse=True)
    tags = list(dict.fromkeys(c.tag for c in cells))
    header = ["setting"]
    for f in fractions:
        header += [f"non_tf_{f:g}", f"tf_{f:g}"]
    rows = []
    for tag in tags:
        row: list = [tag]
        for f in fractions:
            sel = [c for c in cells if c.tag == tag and c.fraction == f]
            row += [float(np.mean([c.non_tf for c in sel])) if sel else math.nan,
                    float(np.mean([c.tf for c in sel])) if sel else math.nan]
        rows.append(row)
    return header, rows


def write_grid(cells: list[GridCell], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header, rows = grid_table(cells)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([row[0]] + [f"{v:.2f}" for v in row[1:]])
    return path


def write_cells(cells: list[GridCell], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["setting", "source", "target", "fraction", "seed", "non_tf", "tf"])
        for c in cells:
            w.writerow([c.tag, c.source, c.target, f"{c.fraction:g}", c.seed, repr(c.non_tf), repr(c.tf)])
    return path

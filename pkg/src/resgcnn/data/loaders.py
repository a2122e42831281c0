"""Readers for the PAMAP2, mHealth and TNDA recordings.

Each loader returns ``(streams, manifest, label_map)`` where
``label_map`` translates the raw label codes found in the files to
contiguous class ids. Channels come out in manifest order: waist IMU,
ankle IMU, then the back/chest sensor.
"""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
import pandas as pd

from .windows import ChannelDescriptor, DatasetManifest, Stream, imu_channels


class DataError(Exception):
    """Missing, malformed or unusable dataset files."""


MAX_GAP = 10

# PAMAP2: 54 columns; three 17-column IMU groups (hand, chest, ankle)
PAMAP2_RATE = 100.0
_PAMAP2_IMU_OFFSET = {"hand": 3, "chest": 20, "ankle": 37}
# within a group: temperature, acc +-16g (3), acc +-6g (3), gyro (3), mag (3), orientation (4)
_PAMAP2_FIELDS = {"acc": 1, "gyro": 7, "mag": 10}
PAMAP2_LABELS = {
    1: "lying", 2: "sitting", 3: "standing", 4: "walking", 5: "running", 6: "cycling",
    7: "Nordic walking", 12: "ascending stairs", 13: "descending stairs", 24: "rope jumping",
}

MHEALTH_RATE = 50.0
MHEALTH_LABELS = {
    1: "standing still", 2: "sitting and relaxing", 3: "lying down", 4: "walking",
    5: "climbing stairs", 6: "waist bends forward", 7: "frontal elevation of arms",
    8: "knees bending", 9: "cycling", 10: "jogging", 11: "running", 12: "jump front and back",
}
# column layout of mHealth_subject*.log (label in column 23)
_MHEALTH_COLUMNS = {
    ("waist", "acc"): 14, ("waist", "gyro"): 17, ("waist", "mag"): 20,
    ("ankle", "acc"): 5, ("ankle", "gyro"): 8, ("ankle", "mag"): 11,
    ("chest", "acc"): 0,
}

TNDA_RATE = 50.0
TNDA_LABELS = {
    1: "standing still", 2: "sitting", 3: "lying down", 4: "walking", 5: "running",
    6: "walking up stairs", 7: "walking down stairs", 8: "cycling",
}


def pamap2_manifest() -> DatasetManifest:
    channels = imu_channels("waist") + imu_channels("ankle") + imu_channels("back")
    return DatasetManifest("pamap2", channels, {i: n for i, n in enumerate(PAMAP2_LABELS.values())})


def mhealth_manifest() -> DatasetManifest:
    channels = imu_channels("waist") + imu_channels("ankle") + imu_channels("chest", ("acc",))
    return DatasetManifest("mhealth", channels, {i: n for i, n in enumerate(MHEALTH_LABELS.values())})


def tnda_manifest() -> DatasetManifest:
    channels = imu_channels("waist") + imu_channels("ankle") + imu_channels("back")
    return DatasetManifest("tnda", channels, {i: n for i, n in enumerate(TNDA_LABELS.values())})


def _read_table(path: Path, sep: str, ncols: int | None, header=None) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, sep=sep, header=header, dtype=str, engine="c", keep_default_na=False)
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    if ncols is not None and frame.shape[1] != ncols:
        raise DataError(f"{path}: expected {ncols} columns, found {frame.shape[1]}")
    return frame


def _to_numeric(frame: pd.DataFrame, path: Path, first_line: int = 1) -> np.ndarray:
    """Float matrix; ``NaN`` tokens are kept, anything else unparseable is an error."""
    raw = frame.replace("", "nan").to_numpy()
    try:
        # numpy parses decimal strings exactly, unlike the pandas fast path
        return raw.astype(np.float64)
    except ValueError:
        pass
    values = frame.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad = np.isnan(values) & ~frame.isin(["NaN", "nan", ""]).to_numpy()
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DataError(f"{path}:{row + first_line}: unparseable value {frame.iat[row, col]!r} in column {col}")
    return values


def fill_gaps(signals: np.ndarray, labels: np.ndarray, max_gap: int = MAX_GAP):
    """Interpolate missing samples in short gaps; split the stream at long ones.

    ``signals`` is ``(C, T)``. A time step is missing when any channel is
    ``NaN``. Gaps of at most ``max_gap`` consecutive steps are filled by
    per-channel linear interpolation; longer gaps (and leading/trailing
    gaps) cut the stream. Returns a list of ``(signals, labels)`` pieces.
    """
    missing = ~np.all(np.isfinite(signals), axis=0)
    t = signals.shape[1]
    if not missing.any():
        return [(signals, labels)]
    pieces = []
    # runs of missing samples
    edges = np.flatnonzero(np.diff(np.concatenate([[0], missing.astype(np.int8), [0]])))
    runs = list(zip(edges[::2], edges[1::2]))
    cuts = [(s, e) for s, e in runs if (e - s) > max_gap or s == 0 or e == t]
    bounds, start = [], 0
    for s, e in cuts:
        if s > start:
            bounds.append((start, s))
        start = e
    if start < t:
        bounds.append((start, t))
    for a, b in bounds:
        sig = signals[:, a:b].copy()
        gap = ~np.all(np.isfinite(sig), axis=0)
        if gap.any():
            idx = np.arange(b - a)
            for ch in range(sig.shape[0]):
                bad = ~np.isfinite(sig[ch])
                if bad.any():
                    sig[ch, bad] = np.interp(idx[bad], idx[~bad], sig[ch, ~bad])
        pieces.append((sig, labels[a:b]))
    return pieces


def _subject_files(path: Path, pattern: str) -> list[Path]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset path does not exist: {path}")
    files = sorted(path.rglob(pattern)) if path.is_dir() else [path]
    if not files:
        raise DataError(f"no files matching {pattern!r} under {path}")
    return files


def load_pamap2(path, max_gap: int = MAX_GAP):
    """Protocol recordings ``subject1XX.dat`` (space separated, 54 columns).

    Keeps the +-16g accelerometer, gyroscope and magnetometer of each IMU.
    Transient (0), vacuum cleaning (16) and ironing (17) rows are dropped
    later by the label map.
    """
    manifest = pamap2_manifest()
    location_of = {"waist": "hand", "ankle": "ankle", "back": "chest"}
    cols = [_PAMAP2_IMU_OFFSET[location_of[c.location]] + _PAMAP2_FIELDS[c.modality] + "xyz".index(c.axis)
            for c in manifest.channels]
    streams = []
    root = Path(path)
    files = [f for f in _subject_files(path, "subject*.dat")
             if not any("optional" in part.lower() for part in f.relative_to(root).parts[:-1])]
    for f in files:
        frame = _read_table(f, " ", 54)
        values = _to_numeric(frame, f)
        labels = np.nan_to_num(values[:, 1], nan=0).astype(np.int64)
        signals = values[:, cols].T
        for k, (sig, lab) in enumerate(fill_gaps(signals, labels, max_gap)):
            streams.append(Stream(sig, lab, f.stem, PAMAP2_RATE, f"{f.name}#{k}"))
    label_map = {raw: i for i, raw in enumerate(PAMAP2_LABELS)}
    return streams, manifest, label_map


def load_mhealth(path, max_gap: int = MAX_GAP):
    """``mHealth_subject*.log`` files (tab separated, 24 columns, 50 Hz)."""
    manifest = mhealth_manifest()
    cols = [_MHEALTH_COLUMNS[(c.location, c.modality)] + "xyz".index(c.axis) for c in manifest.channels]
    streams = []
    for f in _subject_files(path, "mHealth_subject*.log"):
        frame = _read_table(f, "\t", 24)
        values = _to_numeric(frame, f)
        labels = values[:, 23].astype(np.int64)
        for k, (sig, lab) in enumerate(fill_gaps(values[:, cols].T, labels, max_gap)):
            streams.append(Stream(sig, lab, f.stem, MHEALTH_RATE, f"{f.name}#{k}"))
    label_map = {raw: i for i, raw in enumerate(MHEALTH_LABELS)}
    return streams, manifest, label_map


def default_tnda_columns() -> dict:
    """Column map for TNDA CSV exports: one header column per channel."""
    manifest = tnda_manifest()
    return {
        "label": "label",
        "channels": {str(c): f"{c.location}_{c.modality}_{c.axis}" for c in manifest.channels},
        "labels": {str(k): v for k, v in TNDA_LABELS.items()},
        "pattern": "*.csv",
        "sample_rate": TNDA_RATE,
    }


def load_tnda(path, column_map: dict | str | Path | None = None, max_gap: int = MAX_GAP):
    """Comma-separated files with a header row.

    ``column_map`` (dict or JSON file) names the label column, the column
    of every ``location/modality/axis`` channel, the raw label codes and
    the file glob; :func:`default_tnda_columns` shows the layout.
    """
    cmap = default_tnda_columns()
    if isinstance(column_map, (str, Path)):
        column_map = json.loads(Path(column_map).read_text())
    if column_map:
        cmap.update(column_map)
    manifest = tnda_manifest()
    raw_labels = {int(k): v for k, v in cmap["labels"].items()}
    manifest = DatasetManifest("tnda", manifest.channels, {i: n for i, n in enumerate(raw_labels.values())})
    streams = []
    for f in _subject_files(path, cmap["pattern"]):
        frame = _read_table(f, ",", None, header=0)
        needed = [cmap["label"]] + [cmap["channels"][str(c)] for c in manifest.channels]
        missing = [c for c in needed if c not in frame.columns]
        if missing:
            raise DataError(f"{f}: missing columns {missing}")
        values = _to_numeric(frame[needed], f, first_line=2)
        labels = np.nan_to_num(values[:, 0], nan=0).astype(np.int64)
        subject = re.sub(r"[^0-9A-Za-z_-]", "_", f.stem)
        for k, (sig, lab) in enumerate(fill_gaps(values[:, 1:].T, labels, max_gap)):
            streams.append(Stream(sig, lab, subject, float(cmap["sample_rate"]), f"{f.name}#{k}"))
    label_map = {raw: i for i, raw in enumerate(raw_labels)}
    return streams, manifest, label_map


LOADERS = {"pamap2": load_pamap2, "mhealth": load_mhealth, "tnda": load_tnda}

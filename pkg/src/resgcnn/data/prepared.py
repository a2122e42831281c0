"""Dataset preparation and the prepared-dataset archive.

Preparation is load, halve the rate of 100 Hz streams, then segment.
The archive stores the manifest, window parameters and per-channel
statistics in the header and the windows as one ``(W, C, P)`` tensor.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import archive
from .windows import (OVERLAP, STANDARD_RATE, WINDOW_LENGTH, DatasetManifest, SensorWindow, Stream,
                      align_channels, downsample_2x, downsample_labels_2x, segment)

FORMAT = "resgcnn-prepared"
FORMAT_VERSION = 1


@dataclass
class PreparedDataset:
    manifest: DatasetManifest
    windows: list[SensorWindow]
    window_length: int = WINDOW_LENGTH
    overlap: float = OVERLAP
    info: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.windows)

    @property
    def labels(self) -> np.ndarray:
        return np.array([w.label for w in self.windows], dtype=np.int64)

    def subset(self, indices) -> list[SensorWindow]:
        return [self.windows[i] for i in indices]

    def channel_stats(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-channel mean and population std over every window."""
        if not self.windows:
            c = self.manifest.num_channels
            return np.zeros(c), np.zeros(c)
        stack = np.stack([w.signals for w in self.windows])
        return stack.mean(axis=(0, 2)), stack.std(axis=(0, 2))

    def class_counts(self) -> dict[int, int]:
        labels, counts = np.unique(self.labels, return_counts=True)
        return {int(k): int(v) for k, v in zip(labels, counts)}

    def aligned(self, target: DatasetManifest) -> "PreparedDataset":
        """Channels reduced and reordered to ``target``'s channel list.

        The label dictionary stays this dataset's own.
        """
        manifest = DatasetManifest(self.manifest.dataset, list(target.channels), dict(self.manifest.labels))
        windows = [align_channels(w, self.manifest, target) for w in self.windows]
        return PreparedDataset(manifest, windows, self.window_length, self.overlap, dict(self.info))


def prepare_streams(streams: list[Stream], manifest: DatasetManifest, label_map: dict[int, int] | None,
                    window_length: int = WINDOW_LENGTH, overlap: float = OVERLAP) -> PreparedDataset:
    """Bring every stream to 50 Hz and cut it into label-pure windows."""
    windows: list[SensorWindow] = []
    for stream in streams:
        if stream.sample_rate == 2 * STANDARD_RATE:
            stream = Stream(downsample_2x(stream.signals), downsample_labels_2x(stream.labels),
                            stream.subject, STANDARD_RATE, stream.source)
        elif stream.sample_rate != STANDARD_RATE:
            raise ValueError(f"unsupported sample rate {stream.sample_rate} Hz in {stream.source}")
        windows.extend(segment(stream, window_length, overlap, manifest.dataset, label_map))
    return PreparedDataset(manifest, windows, window_length, overlap)


def prepare(dataset: str, path, window_length: int = WINDOW_LENGTH, overlap: float = OVERLAP,
            **loader_options) -> PreparedDataset:
    from .loaders import LOADERS

    if dataset not in LOADERS:
        raise ValueError(f"unknown dataset {dataset!r}; choose from {sorted(LOADERS)}")
    streams, manifest, label_map = LOADERS[dataset](path, **loader_options)
    return prepare_streams(streams, manifest, label_map, window_length, overlap)


def from_windows(windows: list[SensorWindow], manifest: DatasetManifest, window_length: int | None = None,
                 overlap: float = OVERLAP) -> PreparedDataset:
    length = window_length if window_length is not None else (windows[0].signals.shape[1] if windows else WINDOW_LENGTH)
    return PreparedDataset(manifest, list(windows), length, overlap)


# --- archive ---------------------------------------------------------------------------------

def _json_safe(meta: dict) -> dict:
    out = {}
    for k, v in meta.items():
        if isinstance(v, np.generic):
            v = v.item()
        out[str(k)] = v
    return out


def to_bytes(data: PreparedDataset) -> bytes:
    mean, std = data.channel_stats()
    c = data.manifest.num_channels
    signals = (np.stack([w.signals for w in data.windows]) if data.windows
               else np.zeros((0, c, data.window_length)))
    header = {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "manifest": data.manifest.to_dict(),
        "window_length": data.window_length,
        "overlap": data.overlap,
        "sample_rate": STANDARD_RATE,
        "window_count": len(data.windows),
        "info": data.info,
        "subjects": [w.subject for w in data.windows],
        "datasets": [w.dataset for w in data.windows],
        "meta": [_json_safe(w.meta) for w in data.windows],
    }
    return archive.dumps(header, {
        "signals": signals,
        "labels": data.labels,
        "channel_mean": mean,
        "channel_std": std,
    })


def from_bytes(blob: bytes) -> PreparedDataset:
    header, tensors = archive.loads(blob)
    if header.get("format") != FORMAT:
        raise archive.ArchiveError(f"not a prepared dataset (format {header.get('format')!r})")
    signals, labels = tensors["signals"], tensors["labels"]
    windows = [SensorWindow(signals[i], int(labels[i]), header["subjects"][i], header["datasets"][i],
                            header["sample_rate"], header["meta"][i]) for i in range(len(labels))]
    return PreparedDataset(DatasetManifest.from_dict(header["manifest"]), windows, header["window_length"],
                           header["overlap"], header["info"])


def save_prepared(data: PreparedDataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(data))
    return path


def load_prepared(path) -> PreparedDataset:
    return from_bytes(Path(path).read_bytes())

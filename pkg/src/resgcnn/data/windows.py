"""Streams, windows, manifests and the window -> graph conversion."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..graph import GraphSample, build_adjacency

STANDARD_RATE = 50.0
WINDOW_LENGTH = 128
OVERLAP = 0.5

# canonical body locations; chest and back are treated as the same site
CORRESPONDING_LOCATIONS = {"chest": "back"}


@dataclass(frozen=True)
class ChannelDescriptor:
    location: str
    modality: str  # "acc", "gyro" or "mag"
    axis: str  # "x", "y" or "z"

    def key(self) -> tuple[str, str, str]:
        loc = CORRESPONDING_LOCATIONS.get(self.location, self.location)
        return loc, self.modality, self.axis

    def __str__(self) -> str:
        return f"{self.location}/{self.modality}/{self.axis}"


def imu_channels(location: str, modalities=("acc", "gyro", "mag")) -> list[ChannelDescriptor]:
    return [ChannelDescriptor(location, m, a) for m in modalities for a in "xyz"]


@dataclass
class DatasetManifest:
    dataset: str
    channels: list[ChannelDescriptor]
    labels: dict[int, str]

    def __post_init__(self):
        if len(set(self.labels.values())) != len(self.labels):
            raise ValueError("label dictionary must be injective")

    @property
    def num_channels(self) -> int:
        return len(self.channels)

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "channels": [[c.location, c.modality, c.axis] for c in self.channels],
            "labels": {str(k): v for k, v in sorted(self.labels.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(d["dataset"], [ChannelDescriptor(*c) for c in d["channels"]],
                   {int(k): v for k, v in d["labels"].items()})


@dataclass
class Stream:
    """A continuous recording: ``signals`` is ``(C, T)``, ``labels`` is ``(T,)``."""

    signals: np.ndarray
    labels: np.ndarray
    subject: str
    sample_rate: float
    source: str = ""


@dataclass
class SensorWindow:
    signals: np.ndarray  # (C, P)
    label: int
    subject: str = ""
    dataset: str = ""
    sample_rate: float = STANDARD_RATE
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.signals = np.asarray(self.signals, dtype=np.float64)
        if self.signals.ndim != 2:
            raise ValueError("window signals must be (channels, samples)")
        if not np.all(np.isfinite(self.signals)):
            raise ValueError("window contains non-finite values")

    @property
    def num_channels(self) -> int:
        return self.signals.shape[0]


def downsample_2x(stream):
    """Halve the sample rate: 2-tap mean of each sample pair, keep every second.

    Input ``(C, T)`` gives ``(C, ceil(T / 2))``; an odd trailing sample is
    kept unfiltered.
    """
    s = np.asarray(stream, dtype=np.float64)
    t = s.shape[-1]
    out = np.empty(s.shape[:-1] + ((t + 1) // 2,))
    pairs = t // 2
    out[..., :pairs] = 0.5 * (s[..., 0:2 * pairs:2] + s[..., 1:2 * pairs:2])
    if t % 2:
        out[..., -1] = s[..., -1]
    return out


def downsample_labels_2x(labels):
    """Labels follow the first sample of each pair."""
    return np.asarray(labels)[::2]


def window_starts(length: int, window_length: int = WINDOW_LENGTH, overlap: float = OVERLAP) -> np.ndarray:
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    step = int(round(window_length * (1.0 - overlap)))
    if length < window_length:
        return np.zeros(0, dtype=np.int64)
    return np.arange(0, length - window_length + 1, step, dtype=np.int64)


def segment(stream: Stream, window_length: int = WINDOW_LENGTH, overlap: float = OVERLAP,
            dataset: str = "", label_map: dict[int, int] | None = None) -> list[SensorWindow]:
    """Sliding windows that carry a single label throughout.

    ``label_map`` translates raw stream labels to class ids; windows whose
    label is missing from it are dropped.
    """
    out = []
    labels = np.asarray(stream.labels)
    for start in window_starts(stream.signals.shape[1], window_length, overlap):
        lab = labels[start:start + window_length]
        if not np.all(lab == lab[0]):
            continue
        raw = int(lab[0])
        if label_map is not None:
            if raw not in label_map:
                continue
            raw = label_map[raw]
        sig = stream.signals[:, start:start + window_length]
        if not np.all(np.isfinite(sig)):
            continue
        out.append(SensorWindow(sig.copy(), raw, stream.subject, dataset, stream.sample_rate,
                                {"source": stream.source, "offset": int(start)}))
    return out


def channel_index(source: DatasetManifest, target: DatasetManifest) -> list[int]:
    lookup = {c.key(): i for i, c in enumerate(source.channels)}
    idx = []
    for c in target.channels:
        if c.key() not in lookup:
            raise ValueError(f"channel {c} of {target.dataset} has no counterpart in {source.dataset}")
        idx.append(lookup[c.key()])
    return idx


def align_channels(window: SensorWindow, source: DatasetManifest, target: DatasetManifest) -> SensorWindow:
    """Select and reorder ``window``'s channels into ``target``'s order."""
    idx = channel_index(source, target)
    return SensorWindow(window.signals[idx], window.label, window.subject, window.dataset,
                        window.sample_rate, dict(window.meta))


@dataclass
class Standardizer:
    """Per-channel z-score with statistics fitted on training windows only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, windows) -> "Standardizer":
        stack = np.stack([w.signals for w in windows])  # (W, C, P)
        mean = stack.mean(axis=(0, 2))
        std = stack.std(axis=(0, 2))
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def apply(self, signals) -> np.ndarray:
        return (signals - self.mean[:, None]) / self.std[:, None]


def to_graph_sample(window: SensorWindow, psi: float = 0.2, standardizer: Standardizer | None = None,
                    absolute: bool = False) -> GraphSample:
    """Channels become nodes, samples become node features.

    The adjacency comes from the raw signals; standardization touches only
    the node features.
    """
    adj = build_adjacency(window.signals, psi, absolute)
    feats = window.signals if standardizer is None else standardizer.apply(window.signals)
    return GraphSample(feats, adj, window.label,
                       {"dataset": window.dataset, "subject": window.subject, **window.meta})

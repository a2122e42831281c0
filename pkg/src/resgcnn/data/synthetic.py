"""Desk-scale synthetic activity data with known graph structure.

A *family* of classes is fixed by ``family_seed``. Class ``c`` of a
family splits the channels into groups; every group follows its own
latent sinusoid with an integer number of cycles per window, so latents
of different groups are exactly orthogonal over the window and
cross-group correlation is driven by noise alone. Channels of a group
are positive multiples of their latent plus Gaussian noise. Classes
differ in grouping and in base frequency.

Two datasets drawn from overlapping class ranges of the same family
(``class_offset``) share correlation structure, which is what the
transfer experiments rely on.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .windows import STANDARD_RATE, WINDOW_LENGTH, ChannelDescriptor, DatasetManifest, SensorWindow

DEFAULT_CHANNELS = 6


@dataclass(frozen=True)
class ClassSpec:
    groups: tuple[int, ...]  # group id per channel
    cycles: tuple[int, ...]  # cycles per window for each group


def _partition_key(groups) -> tuple[int, ...]:
    # canonical relabelling so equal partitions compare equal
    seen: dict[int, int] = {}
    return tuple(seen.setdefault(g, len(seen)) for g in groups)


def class_signature(spec: ClassSpec) -> tuple[tuple[int, int], ...]:
    """Sorted (group size, cycles) pairs: what survives a channel permutation."""
    sizes = np.bincount(spec.groups)
    return tuple(sorted((int(sizes[j]), c) for j, c in enumerate(spec.cycles)))


def family_specs(count: int, channels: int, family_seed: int = 0, frequency_step: int = 3) -> list[ClassSpec]:
    """The first ``count`` classes of a family, distinct up to channel permutation.

    Class ``i`` has base frequency ``2 + frequency_step * i`` cycles per
    window; ``frequency_step=0`` leaves the grouping as the only cue. The
    network cannot tell channel orderings apart, so two classes whose
    groupings differ only by relabelling channels would be the same class
    to it; such candidates are rejected.
    """
    if channels < 4:
        raise ValueError("synthetic data needs at least 4 channels")
    specs: list[ClassSpec] = []
    seen = set()
    rng = np.random.default_rng([family_seed, channels])
    attempts = 0
    while len(specs) < count:
        attempts += 1
        if attempts > 10_000:
            raise ValueError(f"cannot build {count} distinct classes over {channels} channels")
        n_groups = int(rng.integers(2, 4))
        groups = np.concatenate([np.arange(n_groups), rng.integers(0, n_groups, channels - n_groups)])
        groups = tuple(int(g) for g in rng.permutation(groups))
        base = 2 + frequency_step * len(specs)
        spec = ClassSpec(_partition_key(groups), tuple(base + 7 * j for j in range(n_groups)))
        if class_signature(spec) in seen:
            continue
        seen.add(class_signature(spec))
        specs.append(spec)
    return specs


def synthetic_manifest(num_classes: int, channels: int = DEFAULT_CHANNELS, name: str = "synthetic") -> DatasetManifest:
    chans = [ChannelDescriptor(f"node{i}", "acc", "x") for i in range(channels)]
    return DatasetManifest(name, chans, {c: f"class{c}" for c in range(num_classes)})


def synthetic_generate(num_classes: int = 3, samples_per_class: int = 200, channels: int = DEFAULT_CHANNELS,
                       seed: int = 0, *, snr_db: float | None = 10.0, window_length: int = WINDOW_LENGTH,
                       family_seed: int = 0, class_offset: int = 0, frequency_step: int = 3) -> list[SensorWindow]:
    """Balanced labelled windows, ordered class by class.

    ``snr_db=None`` disables noise. Labels are ``0..num_classes-1`` and
    correspond to family classes ``class_offset..class_offset+num_classes-1``.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    specs = family_specs(class_offset + num_classes, channels, family_seed, frequency_step)[class_offset:]
    rng = np.random.default_rng([seed, 7919])
    t = np.arange(window_length) / window_length
    windows = []
    for label, spec in enumerate(specs):
        groups = np.array(spec.groups)
        cycles = np.array(spec.cycles, dtype=np.float64)
        for i in range(samples_per_class):
            phase = rng.uniform(0.0, 2 * np.pi, len(cycles))
            amp = rng.uniform(0.8, 1.2, len(cycles))
            latents = amp[:, None] * np.sin(2 * np.pi * cycles[:, None] * t[None, :] + phase[:, None])
            gains = rng.uniform(0.5, 1.5, channels)
            signals = gains[:, None] * latents[groups]
            noise = rng.standard_normal(signals.shape)
            if snr_db is not None:
                power = np.mean(signals ** 2, axis=1, keepdims=True)
                signals = signals + noise * np.sqrt(power / 10.0 ** (snr_db / 10.0))
            windows.append(SensorWindow(signals, label, f"s{i % 10}", "synthetic", STANDARD_RATE,
                                        {"index": i}))
    return windows

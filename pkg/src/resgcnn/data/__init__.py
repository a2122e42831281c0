"""Sensor data: loaders, windowing, graph conversion and synthetic data."""
from .loaders import (DataError, LOADERS, load_mhealth, load_pamap2, load_tnda, mhealth_manifest,
                      pamap2_manifest, tnda_manifest)
from .prepared import PreparedDataset, load_prepared, prepare, prepare_streams, save_prepared
from .synthetic import synthetic_generate, synthetic_manifest
from .windows import (ChannelDescriptor, DatasetManifest, SensorWindow, Standardizer, Stream, align_channels,
                      downsample_2x, segment, to_graph_sample)

__all__ = [
    "ChannelDescriptor", "DataError", "DatasetManifest", "LOADERS", "PreparedDataset", "SensorWindow",
    "Standardizer", "Stream", "align_channels", "downsample_2x", "load_mhealth", "load_pamap2",
    "load_prepared", "load_tnda", "mhealth_manifest", "pamap2_manifest", "prepare", "prepare_streams",
    "save_prepared", "segment", "synthetic_generate", "synthetic_manifest", "tnda_manifest",
    "to_graph_sample",
]

from .augment import AugmentSpec, apply_params, augment, sample_params
from .manifest import (
    HAM10000_CLASSES,
    DatasetManifest,
    Entry,
    ManifestError,
    SplitSpec,
    balance_to,
    kfold,
    load_manifest,
    parse_manifest,
    split,
)
from .ppm import decode_ppm, encode_ppm, read_ppm, write_ppm
from .synth import SynthDataset, SynthParams, class_counts, synth_generate, write_dataset

__all__ = [
    "AugmentSpec", "DatasetManifest", "Entry", "HAM10000_CLASSES", "ManifestError", "SplitSpec",
    "SynthDataset", "SynthParams", "apply_params", "augment", "balance_to", "class_counts",
    "decode_ppm", "encode_ppm", "kfold", "load_manifest", "parse_manifest", "read_ppm",
    "sample_params", "split", "synth_generate", "write_dataset", "write_ppm",
]

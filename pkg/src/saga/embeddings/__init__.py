"""Frame-embedding datasets: file format, synthetic generation, splitting and batching."""

from .dataset import (
    SPLIT_NAMES,
    TEST,
    TRAIN,
    VAL,
    DatasetIndex,
    EmbeddingStore,
    VideoEmbedding,
    pk_batches,
    split_dataset,
    stratified_subsample,
)
from .fileformat import read_embedding_file, read_labels_csv, write_embedding_file, write_labels_csv
from .synthetic import ClassArtifacts, SyntheticSpec, default_spec, synth_generate

__all__ = [
    "SPLIT_NAMES", "TEST", "TRAIN", "VAL", "DatasetIndex", "EmbeddingStore", "VideoEmbedding",
    "pk_batches", "split_dataset", "stratified_subsample", "read_embedding_file", "read_labels_csv",
    "write_embedding_file", "write_labels_csv", "ClassArtifacts", "SyntheticSpec", "default_spec",
    "synth_generate",
]

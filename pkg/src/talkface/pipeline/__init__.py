"""Ingestion, two-stage training, inference and evaluation."""

from .config import ConfigError, TrainConfig, config_from_dict, load_config, save_config
from .data import ClipRecord, IngestRejected, ingest_clip, ingest_directory, load_dataset, sample_training_clip
from .evaluate import ClipPair, evaluate, evaluate_dirs
from .infer import InferenceError, InferenceRequest, InferenceResult, infer, infer_to_dir, load_models
from .synth import synth_dataset
from .train import TrainingError, set_strict_mode, train_stage1, train_stage2

__all__ = [
    "ClipPair", "ClipRecord", "ConfigError", "InferenceError", "InferenceRequest", "InferenceResult",
    "IngestRejected", "TrainConfig", "TrainingError", "config_from_dict", "evaluate", "evaluate_dirs", "infer",
    "infer_to_dir", "ingest_clip", "ingest_directory", "load_config", "load_dataset", "load_models",
    "sample_training_clip", "save_config", "set_strict_mode", "synth_dataset", "train_stage1", "train_stage2",
]

"""Attribute acquisition for knowledge-base ontologies from class-path representations."""

from .estimator import TransAtt
from .evaluation import EvalReport, OracleRanker, hits_at_k, mean_precision_at_k, precision_at_k, run_apc, run_ape
from .kb import ClassPath, KbSubset, PathSet, TrainingTuple, build_dataset, extract_class_paths, load_kb, save_kb, validate_kb
from .model import FORMAT_VERSION, ModelConfig, TransAttModel, load_checkpoint, save_checkpoint
from .numerics import Rng
from .synth import SynthConfig, generate
from .trainer import DivergenceError, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ClassPath", "DivergenceError", "EvalReport", "FORMAT_VERSION", "KbSubset", "ModelConfig",
    "OracleRanker", "PathSet", "Rng", "SynthConfig", "TrainConfig", "TrainingTuple", "TransAtt",
    "TransAttModel", "build_dataset", "extract_class_paths", "generate", "hits_at_k",
    "load_checkpoint", "load_kb", "mean_precision_at_k", "precision_at_k", "run_apc", "run_ape",
    "save_checkpoint", "save_kb", "train", "validate_kb",
]

"""Conditional VAE anomaly detection for machine sounds, with label-hierarchy conditioning."""

from .audio import SpectrogramConfig, extract_features, read_wav, write_wav
from .conditioning import ConditionMode, Taxonomy, build_taxonomy, encode_condition
from .evaluation import EvalConfig, auc_paper, auc_rank, evaluate_dataset, score_clip
from .model import VaeConfig, elbo_loss, init_params, kl_gaussian, reconstruction_error
from .synth import SynthSpec, generate_clip, generate_dataset
from .training import Checkpoint, TrainConfig, TrainingSet, finetune, load_checkpoint, save_checkpoint, train

__all__ = [
    "Checkpoint",
    "ConditionMode",
    "EvalConfig",
    "SpectrogramConfig",
    "SynthSpec",
    "Taxonomy",
    "TrainConfig",
    "TrainingSet",
    "VaeConfig",
    "auc_paper",
    "auc_rank",
    "build_taxonomy",
    "elbo_loss",
    "encode_condition",
    "evaluate_dataset",
    "extract_features",
    "finetune",
    "generate_clip",
    "generate_dataset",
    "init_params",
    "kl_gaussian",
    "load_checkpoint",
    "read_wav",
    "reconstruction_error",
    "save_checkpoint",
    "score_clip",
    "train",
    "write_wav",
]

"""Dysarthric speech synthesis: rhythm modelling, contrastive duration loss and style-conditioned flow matching."""

from .alignment import (
    AlignmentPath,
    PauseLabelSequence,
    bucket_pauses,
    monotonic_alignment_search,
    pause_labels_from_alignment,
)
from .config import TrainConfig, load_train_config
from .corpus import (
    MelSpectrogram,
    Strategy,
    ToyCorpusConfig,
    UtteranceRecord,
    generate_toy_corpus,
    group_records,
    load_manifest,
    load_mel,
    save_mel,
)
from .cpo import CpoConfig, NormalDurationTable, cpo_loss, cpo_weights
from .flow import OtCfmConfig, cfm_loss, euler_sample
from .kernels import BACKEND
from .metrics import EvalReport, build_report, mcd, wer
from .model import DarsModel
from .rhythm import RhythmPredictor, duration_mse, insert_pause_embeddings, pause_cross_entropy
from .trainer import train, train_group

__version__ = "0.1.0"

__all__ = [
    "AlignmentPath",
    "BACKEND",
    "CpoConfig",
    "DarsModel",
    "EvalReport",
    "MelSpectrogram",
    "NormalDurationTable",
    "OtCfmConfig",
    "PauseLabelSequence",
    "RhythmPredictor",
    "Strategy",
    "ToyCorpusConfig",
    "TrainConfig",
    "UtteranceRecord",
    "bucket_pauses",
    "build_report",
    "cfm_loss",
    "cpo_loss",
    "cpo_weights",
    "duration_mse",
    "euler_sample",
    "generate_toy_corpus",
    "group_records",
    "insert_pause_embeddings",
    "load_manifest",
    "load_mel",
    "load_train_config",
    "mcd",
    "monotonic_alignment_search",
    "pause_cross_entropy",
    "pause_labels_from_alignment",
    "save_mel",
    "train",
    "train_group",
    "wer",
]

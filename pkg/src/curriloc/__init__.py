"""Triplet-loss embeddings and hierarchical room/position retrieval for indoor localization."""
from __future__ import annotations

__version__ = "0.1.0"

from .core import ImageRecord, Pose, cosine, derive_seed, euclidean, normalize
from .effects import EffectSpec, add_gaussian_noise, motion_blur, occlude_columns
from .encoder import EncoderParams, encoder_backward, encoder_forward, encoder_init, featurize, sgd_step
from .losses import (ALL_KINDS, BASE_KINDS, DistanceProfile, LossParams, LossSpec, TripletBatch,
                     curriculum_forward, curriculum_gradient, curriculum_weight, loss_and_gradient,
                     loss_forward, loss_gradient)
from .mining import MiningConfig, sample_coarse_triplet, sample_fine_triplet, triplet_stream
from .retrieval import (RetrievalConfig, VisualMap, build_visual_map, evaluate, hierarchical_localize,
                        room_representatives, single_step_localize)
from .trainer import TrainConfig, train, train_coarse, train_fine

__all__ = [
    "ALL_KINDS", "BASE_KINDS", "DistanceProfile", "EffectSpec", "EncoderParams", "ImageRecord",
    "LossParams", "LossSpec", "MiningConfig", "Pose", "RetrievalConfig", "TrainConfig", "TripletBatch",
    "VisualMap", "add_gaussian_noise", "build_visual_map", "cosine", "curriculum_forward",
    "curriculum_gradient", "curriculum_weight", "derive_seed", "encoder_backward", "encoder_forward",
    "encoder_init", "euclidean", "evaluate", "featurize", "hierarchical_localize", "loss_and_gradient",
    "loss_forward", "loss_gradient", "motion_blur", "normalize", "occlude_columns", "room_representatives",
    "sample_coarse_triplet", "sample_fine_triplet", "sgd_step", "single_step_localize", "train",
    "train_coarse", "train_fine", "triplet_stream",
]

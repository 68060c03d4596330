"""Autodiff engine, descriptor encoder, contrastive head and trainer."""

from . import tensor
from .checkpoint import load_checkpoint, quantize_f32, save_checkpoint
from .encoder import (EncoderParams, MIN_PATCH_SIZE, POINT_FEATURE_DIM, VEC_WIDTHS,
                      WIDTHS, encode_packed, encode_patch, encode_patches,
                      init_encoder, pack_patches, prepare_points)
from .simsiam import (SimSiamHead, cosine_matrix, init_head, matching_accuracy,
                      mean_pairwise_cosine, simsiam_loss)
from .train import (TrainConfig, TrainResult, collapse_statistic, init_model,
                    prepare_pairs, train, validate_matching)

__all__ = [
    "tensor", "load_checkpoint", "quantize_f32", "save_checkpoint",
    "EncoderParams", "MIN_PATCH_SIZE", "POINT_FEATURE_DIM", "VEC_WIDTHS", "WIDTHS",
    "encode_packed", "encode_patch", "encode_patches", "init_encoder",
    "pack_patches", "prepare_points",
    "SimSiamHead", "cosine_matrix", "init_head", "matching_accuracy",
    "mean_pairwise_cosine", "simsiam_loss",
    "TrainConfig", "TrainResult", "collapse_statistic", "init_model",
    "prepare_pairs", "train", "validate_matching",
]

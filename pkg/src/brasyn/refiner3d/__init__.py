"""Stage 2: volumetric refinement with element-wise cross-attention."""

from .model import (ElementwiseCrossAttention, FeatureField, Refiner, RefinerConfig, UNetEncoder3D, encode,
                    elementwise_attention, elementwise_cross_attention, load_refiner, refine)
from .train import (RefinerTrainConfig, Stage2Case, combine_refiner_terms, make_stage2_case, refiner_loss,
                    stage1_to_stage2, train_refiner, volume_dice)

__all__ = [
    "ElementwiseCrossAttention", "FeatureField", "Refiner", "RefinerConfig", "RefinerTrainConfig",
    "Stage2Case", "UNetEncoder3D", "combine_refiner_terms", "elementwise_attention",
    "elementwise_cross_attention", "encode", "load_refiner", "make_stage2_case", "refine", "refiner_loss",
    "stage1_to_stage2", "train_refiner", "volume_dice",
]

"""Stage 1: conditional 2D slice synthesis."""

from .losses import Stage1LossWeights, Stage1Outputs, generator_loss, weighted_total
from .model import GeneratorConfig, Stage1Model
from .synthesize import synthesize_slice, synthesize_volume
from .train import SliceDataset, Stage1TrainConfig, build_slice_dataset, load_stage1, train_stage1

__all__ = [
    "GeneratorConfig", "SliceDataset", "Stage1LossWeights", "Stage1Model", "Stage1Outputs",
    "Stage1TrainConfig", "build_slice_dataset", "generator_loss", "load_stage1",
    "synthesize_slice", "synthesize_volume", "train_stage1", "weighted_total",
]

"""Slice and volume synthesis with a trained stage-1 model."""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np
import torch

from ..intensity import IntensityPrior, SamplingStrategy, median_brain_intensity, sample_target_intensity
from ..volumes import MODALITIES, Modality, MultiModalStudy, Volume, linear_rescale
from .model import Stage1Model


def _generate(model: Stage1Model, stack: np.ndarray, present: np.ndarray, target: Modality,
              intensity: float, batch_size: int = 64) -> np.ndarray:
    """Run the generator over (N, 4, H, W) inputs in eval mode."""
    model.eval()
    dtype = next(model.parameters()).dtype
    outs = []
    with torch.no_grad():
        for start in range(0, len(stack), batch_size):
            x = torch.as_tensor(stack[start:start + batch_size], dtype=dtype)
            b = x.shape[0]
            pres = torch.as_tensor(present, dtype=torch.bool).expand(b, -1)
            tgt = torch.full((b,), target.index, dtype=torch.long)
            inten = torch.full((b,), float(intensity), dtype=dtype)
            fake, _ = model.generator(x, pres, tgt, inten)
            outs.append(fake[:, 0].cpu().numpy())
    return np.concatenate(outs, axis=0)


def synthesize_slice(model: Stage1Model, available: Dict[Modality, np.ndarray], target: Modality,
                     intensity: float) -> np.ndarray:
    """Synthesize one target slice from 1-3 available [-1, 1]-scaled slices."""
    target = Modality.parse(target)
    available = {Modality.parse(m): np.asarray(v) for m, v in available.items()}
    if not available:
        raise ValueError("at least one available modality is required")
    if target in available:
        raise ValueError(f"target {target.value} is among the inputs")
    shapes = {v.shape for v in available.values()}
    if len(shapes) != 1:
        raise ValueError("available slices differ in shape")
    shape = shapes.pop()
    stack = np.zeros((1, 4) + shape, np.float32)
    present = np.zeros(4, bool)
    for m, v in available.items():
        stack[0, m.index] = v
        present[m.index] = True
    return _generate(model, stack, present, target, intensity)[0]


def synthesize_volume(
    model: Stage1Model,
    study: MultiModalStudy,
    target: Modality,
    prior: Optional[IntensityPrior] = None,
    strategy: SamplingStrategy = SamplingStrategy.MEAN,
    rng_seed=None,
    gt_intensity: Optional[float] = None,
    intensity: Optional[float] = None,
) -> Volume:
    """Synthesize ``target`` slice by slice with one shared conditioned intensity.

    Inputs are the study's other modalities rescaled to [-1, 1]; the result is
    on the same scale with voxels outside the inputs' brain mask set to -1.
    ``intensity`` overrides sampling (used for conditioning sweeps).
    """
    target = Modality.parse(target)
    strategy = SamplingStrategy(strategy)
    inputs = study.without(target)
    if not inputs.volumes:
        raise ValueError("no available modalities to synthesize from")
    if intensity is None:
        if strategy is SamplingStrategy.GROUND_TRUTH and gt_intensity is None and target in study.volumes:
            vol = study.volumes[target]
            gt_intensity = median_brain_intensity(linear_rescale(vol).data, vol.data != 0)
        if prior is None and strategy is not SamplingStrategy.GROUND_TRUTH:
            raise ValueError(f"no intensity prior for {target.value}")
        intensity = sample_target_intensity(prior, strategy, gt_intensity, rng_seed)

    d, h, w = study.shape
    stack = np.zeros((d, 4, h, w), np.float32)
    present = np.zeros(4, bool)
    for m, vol in inputs.volumes.items():
        stack[:, m.index] = linear_rescale(vol).data
        present[m.index] = True
    out = _generate(model, stack, present, target, intensity)
    brain = inputs.brain_mask()
    out = np.where(brain, out, -1.0).astype(np.float32)
    meta = {"conditioned_intensity": float(intensity), "strategy": strategy.value,
            "target": target.value, "case_id": study.case_id}
    return Volume(out, study.spacing, target, meta)

"""Target-intensity condition: median brain intensity, priors, sampling, encoding."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .volumes import MODALITIES, Modality, Volume, linear_rescale


class SamplingStrategy(str, enum.Enum):
    MEAN = "mean"
    CLIP2SIGMA = "clip2sigma"
    GROUND_TRUTH = "gt"


@dataclass(frozen=True)
class IntensityPrior:
    modality: Modality
    mean: float
    std: float
    n_samples: int = 0

    def __post_init__(self):
        if self.std < 0:
            raise ValueError("prior std must be non-negative")


# Median brain intensity priors on the [-1, 1] scale, fitted on BraTS 2024 training data.
REFERENCE_PRIORS: Dict[Modality, IntensityPrior] = {
    Modality.T1: IntensityPrior(Modality.T1, 0.4332, 0.1003, 1251),
    Modality.T2: IntensityPrior(Modality.T2, 0.2498, 0.0626, 1251),
    Modality.FLAIR: IntensityPrior(Modality.FLAIR, 0.3034, 0.1017, 1251),
    Modality.T1CE: IntensityPrior(Modality.T1CE, 0.2404, 0.0623, 1251),
}


def median_brain_intensity(values: np.ndarray, brain_mask: np.ndarray) -> float:
    """Median of ``values`` over ``brain_mask`` (values already on the [-1, 1] scale)."""
    brain = np.asarray(values)[np.asarray(brain_mask, dtype=bool)]
    if brain.size == 0:
        raise ValueError("empty brain mask")
    return float(np.median(brain.astype(np.float64)))


def volume_median_intensity(vol: Volume) -> float:
    """Median brain intensity of a raw volume after the [-1, 1] rescale."""
    mask = vol.brain_mask()
    return median_brain_intensity(linear_rescale(vol, -1.0, 1.0).data, mask)


def fit_prior(volumes_or_medians: Sequence, modality: Modality) -> IntensityPrior:
    """Fit a normal prior to per-volume medians (sample mean, population std).

    Accepts either :class:`Volume` objects or precomputed median values.
    """
    modality = Modality.parse(modality)
    medians = []
    for item in volumes_or_medians:
        if isinstance(item, Volume):
            if item.modality is not None and item.modality != modality:
                raise ValueError(f"expected {modality.value} volumes, got {item.modality.value}")
            medians.append(volume_median_intensity(item))
        else:
            medians.append(float(item))
    if len(medians) < 2:
        raise ValueError("fit_prior needs at least two volumes")
    arr = np.asarray(medians, dtype=np.float64)
    return IntensityPrior(modality, float(arr.mean()), float(arr.std()), len(arr))


def sample_target_intensity(
    prior: IntensityPrior,
    strategy: SamplingStrategy,
    gt: Optional[float] = None,
    rng_seed=None,
) -> float:
    strategy = SamplingStrategy(strategy)
    if strategy is SamplingStrategy.GROUND_TRUTH:
        if gt is None:
            raise ValueError("ground-truth strategy needs the target intensity")
        return float(gt)
    if strategy is SamplingStrategy.MEAN:
        return float(prior.mean)
    if prior.std == 0:
        return float(prior.mean)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    lo, hi = prior.mean - 2 * prior.std, prior.mean + 2 * prior.std
    return float(np.clip(rng.normal(prior.mean, prior.std), lo, hi))


def save_priors(path, priors: Iterable[IntensityPrior]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["modality", "mean", "std", "n_samples"])
        for p in sorted(priors, key=lambda p: p.modality.index):
            writer.writerow([p.modality.value, repr(p.mean), repr(p.std), p.n_samples])


def load_priors(path) -> Dict[Modality, IntensityPrior]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            m = Modality.parse(row["modality"])
            out[m] = IntensityPrior(m, float(row["mean"]), float(row["std"]), int(row["n_samples"]))
    return out


def sinusoidal_embedding(x: torch.Tensor, width: int = 64, max_freq: float = 10.0) -> torch.Tensor:
    """Map scalars ``x`` of shape (B,) to (B, width) sin/cos features."""
    half = width // 2
    freqs = torch.exp(torch.linspace(0.0, math.log(max_freq), half, dtype=x.dtype, device=x.device))
    angles = x[:, None] * freqs[None, :]
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)


@dataclass
class ConditionCode:
    modality_onehot: np.ndarray
    intensity: float
    embedding: np.ndarray


class ConditionEncoder(nn.Module):
    """Joint modality + intensity code: Linear([one-hot || sinusoid(intensity)]).

    With ``use_intensity=False`` the sinusoidal part is zeroed so the code
    carries the target modality only (the no-intensity-encoding ablation).
    """

    def __init__(self, out_width: int = 128, sin_width: int = 64, use_intensity: bool = True):
        super().__init__()
        self.sin_width = sin_width
        self.use_intensity = use_intensity
        self.proj = nn.Linear(len(MODALITIES) + sin_width, out_width)

    def forward(self, modality_idx: torch.Tensor, intensity: torch.Tensor) -> torch.Tensor:
        onehot = nn.functional.one_hot(modality_idx, len(MODALITIES)).to(self.proj.weight.dtype)
        sin = sinusoidal_embedding(intensity.to(onehot.dtype), self.sin_width)
        if not self.use_intensity:
            sin = torch.zeros_like(sin)
        return self.proj(torch.cat([onehot, sin], dim=1))


def encode_condition(encoder: ConditionEncoder, modality: Modality, intensity: float) -> ConditionCode:
    if not math.isfinite(intensity):
        raise ValueError("intensity must be finite")
    modality = Modality.parse(modality)
    idx = torch.tensor([modality.index])
    dtype = encoder.proj.weight.dtype
    with torch.no_grad():
        emb = encoder(idx, torch.tensor([intensity], dtype=dtype))[0]
    onehot = np.zeros(len(MODALITIES), dtype=np.int64)
    onehot[modality.index] = 1
    return ConditionCode(onehot, float(intensity), emb.cpu().numpy())

"""Stage-1 composite generator objective.

total = a*rec + b*sim + g*cyc + d*adv + e*cls + z*ssim + h*ssim_tumor
"""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields
from typing import Dict, Tuple

import torch
import torch.nn.functional as F

from ..losses import masked_ssim_loss, ssim_loss

TERMS = ("rec", "sim", "cyc", "adv", "cls", "ssim", "ssim_tumor")


@dataclass
class Stage1LossWeights:
    rec: float = 10.0
    sim: float = 1.0
    cyc: float = 1.0
    adv: float = 0.25
    cls: float = 0.25
    ssim: float = 5.0
    ssim_tumor: float = 5.0

    def __post_init__(self):
        if any(w < 0 for w in astuple(self)):
            raise ValueError("loss weights must be non-negative")

    def as_dict(self) -> Dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class Stage1Outputs:
    fake: torch.Tensor            # (B, 1, H, W) synthesized target
    target: torch.Tensor          # (B, 1, H, W) real target
    fused: torch.Tensor           # common-space feature from the available set
    teacher_fused: torch.Tensor   # same, from the full set (no gradient)
    cycle_fake: torch.Tensor      # re-synthesized input modality
    cycle_real: torch.Tensor
    d_adv_fake: torch.Tensor      # discriminator patch scores on ``fake``
    d_cls_fake: torch.Tensor      # (B, 4) modality logits on ``fake``
    target_idx: torch.Tensor      # (B,)


def weighted_total(terms: Dict[str, torch.Tensor], weights: Stage1LossWeights) -> torch.Tensor:
    w = weights.as_dict()
    total = 0.0
    for name in TERMS:
        total = total + w[name] * terms[name]
    return total


def generator_loss(out: Stage1Outputs, tumor_mask: torch.Tensor, weights: Stage1LossWeights,
                   ssim_window: int = 7) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    """Weighted generator objective and its per-term breakdown.

    The adversarial term uses least-squares targets (fake -> 1); cosine
    similarity enters as ``1 - cos`` so every term except ``adv`` is >= 0.
    """
    if out.fake.shape != out.target.shape:
        raise ValueError(f"shape mismatch {tuple(out.fake.shape)} vs {tuple(out.target.shape)}")
    if tumor_mask.shape != out.target.shape:
        raise ValueError("tumor mask must match the target slice shape")
    cos = F.cosine_similarity(out.fused.flatten(1), out.teacher_fused.detach().flatten(1), dim=1)
    terms = {
        "rec": F.l1_loss(out.fake, out.target),
        "sim": (1.0 - cos).mean(),
        "cyc": F.l1_loss(out.cycle_fake, out.cycle_real),
        "adv": F.mse_loss(out.d_adv_fake, torch.ones_like(out.d_adv_fake)),
        "cls": F.cross_entropy(out.d_cls_fake, out.target_idx),
        "ssim": ssim_loss(out.fake, out.target, ssim_window, 2.0),
        "ssim_tumor": masked_ssim_loss(out.fake, out.target, tumor_mask, ssim_window, 2.0),
    }
    return weighted_total(terms, weights), terms


def discriminator_loss(d_adv_real, d_cls_real, d_adv_fake, target_idx) -> torch.Tensor:
    adv = 0.5 * (F.mse_loss(d_adv_real, torch.ones_like(d_adv_real))
                 + F.mse_loss(d_adv_fake, torch.zeros_like(d_adv_fake)))
    return adv + F.cross_entropy(d_cls_real, target_idx)

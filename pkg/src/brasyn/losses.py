"""Differentiable SSIM and soft-Dice used by both training stages."""

from __future__ import annotations

import torch
import torch.nn.functional as F


def ssim_map_torch(x: torch.Tensor, y: torch.Tensor, window: int = 7, data_range=2.0) -> torch.Tensor:
    """SSIM map for (B, C, H, W) or (B, C, D, H, W) tensors with a uniform window.

    ``data_range`` is a float or a per-sample tensor of shape (B,).
    """
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    spatial = x.dim() - 2
    if spatial not in (2, 3):
        raise ValueError("expected a 4D or 5D tensor")
    pool = F.avg_pool2d if spatial == 2 else F.avg_pool3d
    pad = window // 2

    def mean(t):
        t = F.pad(t, [pad] * (2 * spatial), mode="reflect")
        return pool(t, window, stride=1)

    if torch.is_tensor(data_range):
        data_range = data_range.to(x.dtype).view(-1, *([1] * (spatial + 1)))
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_x, mu_y = mean(x), mean(y)
    var_x = mean(x * x) - mu_x * mu_x
    var_y = mean(y * y) - mu_y * mu_y
    cov = mean(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return num / den


def ssim_loss(x, y, window: int = 7, data_range=2.0) -> torch.Tensor:
    return 1.0 - ssim_map_torch(x, y, window, data_range).mean()


def masked_ssim_loss(x, y, mask, window: int = 7, data_range=2.0) -> torch.Tensor:
    """1 - mean SSIM inside ``mask`` per sample; samples with an empty mask contribute 0."""
    smap = ssim_map_torch(x, y, window, data_range)
    mask = mask.to(smap.dtype)
    dims = tuple(range(1, smap.dim()))
    count = mask.sum(dim=dims)
    per_sample = (smap * mask).sum(dim=dims) / count.clamp(min=1.0)
    loss = torch.where(count > 0, 1.0 - per_sample, torch.zeros_like(per_sample))
    return loss.mean()


def region_probabilities(probs: torch.Tensor) -> torch.Tensor:
    """(B, 4, ...) class probabilities -> (B, 3, ...) for WT, TC, ET."""
    p_nec, p_ed, p_enh = probs[:, 1], probs[:, 2], probs[:, 3]
    return torch.stack([p_nec + p_ed + p_enh, p_nec + p_enh, p_enh], dim=1)


def region_targets(labels: torch.Tensor) -> torch.Tensor:
    """(B, ...) integer labels -> (B, 3, ...) binary WT, TC, ET masks."""
    wt = labels > 0
    tc = (labels == 1) | (labels == 3)
    et = labels == 3
    return torch.stack([wt, tc, et], dim=1)


def soft_dice_loss(probs: torch.Tensor, labels: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Mean over samples and WT/TC/ET of ``1 - soft Dice``; lies in [0, 1]."""
    p = region_probabilities(probs)
    g = region_targets(labels).to(p.dtype)
    dims = tuple(range(2, p.dim()))
    inter = (p * g).sum(dim=dims)
    denom = p.sum(dim=dims) + g.sum(dim=dims)
    dice = (2 * inter + eps) / (denom + eps)
    return (1.0 - dice).mean()

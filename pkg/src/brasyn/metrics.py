"""Evaluation measures: SSIM (whole / masked), Dice and HD95 per tumor region."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.ndimage import binary_erosion, distance_transform_edt, generate_binary_structure, uniform_filter

from .volumes import REGIONS, compose_regions

HD95_EMPTY_SENTINEL = 373.1287
SSIM_WINDOW = 7
SSIM_VARIANT = (f"uniform {SSIM_WINDOW}^3 window, population moments, mirrored borders, "
                "data range = dynamic range of the reference")


def ssim_map(a, b, window: int = SSIM_WINDOW, data_range: Optional[float] = None) -> np.ndarray:
    """Per-voxel SSIM with a uniform ``window``-wide cube.

    Moments use population statistics; borders are mirrored without repeating
    the edge voxel (the same padding as the differentiable training loss).
    ``data_range`` defaults to the dynamic range of ``b`` (the reference).
    """
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if data_range is None:
        data_range = float(b.max() - b.min()) or 1.0
    if data_range <= 0:
        raise ValueError("data_range must be positive")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def mean(x):
        return uniform_filter(x, size=window, mode="mirror")

    mu_a, mu_b = mean(a), mean(b)
    var_a = mean(a * a) - mu_a * mu_a
    var_b = mean(b * b) - mu_b * mu_b
    cov = mean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim_region(a, b, mask, window: int = SSIM_WINDOW, data_range: Optional[float] = None, smap=None) -> float:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty region mask")
    if smap is None:
        smap = ssim_map(a, b, window, data_range)
    return float(smap[mask].mean())


def dice(pred, gt) -> float:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    total = pred.sum() + gt.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(pred, gt).sum() / total)


_SIX_CONNECTED = generate_binary_structure(3, 1)


def surface(mask) -> np.ndarray:
    """Foreground voxels with at least one 6-connected background neighbor (outside counts as background)."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~binary_erosion(mask, structure=_SIX_CONNECTED, border_value=0)


def surface_distances(pred, gt, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Nearest-surface distances pred->gt followed by gt->pred, in mm."""
    sp, sg = surface(pred), surface(gt)
    to_gt = distance_transform_edt(~sg, sampling=spacing)
    to_pred = distance_transform_edt(~sp, sampling=spacing)
    return np.concatenate([to_gt[sp], to_pred[sg]])


def hd95(pred, gt, spacing=(1.0, 1.0, 1.0)) -> float:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    p_any, g_any = pred.any(), gt.any()
    if not p_any and not g_any:
        return 0.0
    if not p_any or not g_any:
        return HD95_EMPTY_SENTINEL
    return float(np.percentile(surface_distances(pred, gt, spacing), 95))


@dataclass
class MetricReport:
    case_id: str
    ssim_whole: float
    ssim_tumor: float
    ssim_healthy: float
    dice: Dict[str, float] = field(default_factory=dict)
    hd95: Dict[str, float] = field(default_factory=dict)
    extra: Dict[str, float] = field(default_factory=dict)

    def as_row(self) -> dict:
        row = {"case_id": self.case_id, "ssim_whole": self.ssim_whole,
               "ssim_tumor": self.ssim_tumor, "ssim_healthy": self.ssim_healthy}
        for r in REGIONS:
            row[f"dice_{r}"] = self.dice.get(r, float("nan"))
        for r in REGIONS:
            row[f"hd95_{r}"] = self.hd95.get(r, float("nan"))
        row.update(self.extra)
        return row


def evaluate_case(
    case_id: str,
    synthesized,
    reference,
    gt_labels,
    pred_labels=None,
    spacing=(1.0, 1.0, 1.0),
    brain_mask=None,
    window: int = SSIM_WINDOW,
) -> MetricReport:
    """SSIM of ``synthesized`` vs ``reference`` plus region Dice/HD95 of ``pred_labels`` vs ``gt_labels``.

    Tumor/healthy SSIM use the ground-truth whole-tumor mask and its
    complement inside ``brain_mask`` (whole array when not given). A region
    that is empty yields NaN.
    """
    smap = ssim_map(synthesized, reference, window)
    gt_regions = compose_regions(gt_labels)
    domain = np.ones(smap.shape, bool) if brain_mask is None else np.asarray(brain_mask, bool)
    tumor = gt_regions["WT"]
    healthy = domain & ~tumor
    s_tumor = float(smap[tumor].mean()) if tumor.any() else float("nan")
    s_healthy = float(smap[healthy].mean()) if healthy.any() else float("nan")
    d, h = {}, {}
    if pred_labels is not None:
        pred_regions = compose_regions(pred_labels)
        for r in REGIONS:
            d[r] = dice(pred_regions[r], gt_regions[r])
            h[r] = hd95(pred_regions[r], gt_regions[r], spacing)
    return MetricReport(case_id, float(smap.mean()), s_tumor, s_healthy, d, h)


def summarize(values: Sequence[float]) -> Dict[str, float]:
    """Mean / std / median / quartiles, ignoring NaNs."""
    arr = np.asarray([v for v in values if v == v], dtype=np.float64)
    if arr.size == 0:
        return {k: float("nan") for k in ("mean", "std", "median", "q25", "q75")}
    return {
        "mean": float(arr.mean()),
        "std": float(arr.std()),
        "median": float(np.median(arr)),
        "q25": float(np.percentile(arr, 25)),
        "q75": float(np.percentile(arr, 75)),
    }

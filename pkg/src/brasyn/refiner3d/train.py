"""Refiner objective (SSIM + segmentation Dice through a frozen segmenter) and training loop."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from ..checkpoint import save_checkpoint
from ..losses import soft_dice_loss, ssim_map_torch
from ..metrics import dice
from ..segproxy import ProxySegmenter, segment, study_channels
from ..synth2d.train import write_history
from ..volumes import MODALITIES, Modality, MultiModalStudy, compose_regions, pad_to_size
from .model import Refiner, RefinerConfig, refine

log = logging.getLogger(__name__)


@dataclass
class RefinerTrainConfig:
    epochs: int = 100
    batch_size: int = 4
    lr: float = 1e-4
    patch_size: int = 128
    patches_per_case: int = 1
    lambda_ssim: float = 1.0
    lambda_dice: float = 1.0
    val_every: int = 1
    seed: int = 0


@dataclass
class Stage2Case:
    case_id: str
    target: Modality
    channels: np.ndarray     # (4, D, H, W) z-normalized real modalities
    synthesized: np.ndarray  # (D, H, W) z-normalized stage-1 output for ``target``
    labels: np.ndarray       # (D, H, W)


def stage1_to_stage2(syn: np.ndarray, brain_mask: np.ndarray) -> np.ndarray:
    """Map a [-1, 1] synthesized volume onto the stage-2 scale (z-scored over the brain mask)."""
    mask = np.asarray(brain_mask, bool)
    x = (np.asarray(syn, np.float64) + 1.0) / 2.0
    vals = x[mask]
    std = vals.std()
    if std == 0:
        raise ValueError("synthesized volume is constant inside the brain")
    out = np.zeros_like(x)
    out[mask] = (vals - vals.mean()) / std
    return out.astype(np.float32)


def make_stage2_case(study: MultiModalStudy, syn_stage1: np.ndarray, target: Modality) -> Stage2Case:
    if study.labels is None:
        raise ValueError(f"{study.case_id}: refiner training needs labels")
    target = Modality.parse(target)
    channels = study_channels(study)
    syn = stage1_to_stage2(syn_stage1, study.without(target).brain_mask())
    return Stage2Case(study.case_id, target, channels, syn, study.labels.data.astype(np.int64))


def combine_refiner_terms(l_ssim, l_dice, lambda_ssim: float = 1.0, lambda_dice: float = 1.0):
    return lambda_ssim * l_ssim + lambda_dice * l_dice


def refiner_loss(refined: torch.Tensor, target: torch.Tensor, labels: Optional[torch.Tensor],
                 segmenter: ProxySegmenter, context: torch.Tensor, target_idx: int,
                 lambda_ssim: float = 1.0, lambda_dice: float = 1.0, window: int = 7):
    """``lambda_ssim * (1 - SSIM) + lambda_dice * softDice(segmenter(context with refined))``.

    ``refined``/``target``: (B, 1, D, H, W); ``context``: (B, 4, D, H, W) real
    channels whose ``target_idx`` channel is replaced by ``refined`` before
    segmentation. Gradients reach ``refined`` through both terms; the
    segmenter's own parameters are never updated.
    """
    if labels is None:
        raise ValueError("refiner loss needs a label map")
    if refined.shape != target.shape:
        raise ValueError("refined and target shapes differ")
    data_range = (target.flatten(1).max(dim=1).values - target.flatten(1).min(dim=1).values).clamp(min=1e-6)
    l_ssim = 1.0 - ssim_map_torch(refined, target, window, data_range.detach()).mean()
    onehot = torch.zeros(1, context.shape[1], *([1] * (context.dim() - 2)), dtype=torch.bool)
    onehot[0, target_idx] = True
    seg_in = torch.where(onehot, refined.expand_as(context), context)
    probs = torch.softmax(segmenter(seg_in), dim=1)
    l_dice = soft_dice_loss(probs, labels)
    total = combine_refiner_terms(l_ssim, l_dice, lambda_ssim, lambda_dice)
    return total, {"ssim": l_ssim, "dice": l_dice}


def _crop_case(case: Stage2Case, size: int, rng: np.random.Generator):
    arrays = [case.channels[i] for i in range(4)] + [case.synthesized, case.labels]
    padded = [pad_to_size(a, size)[0] for a in arrays]
    shape = padded[0].shape
    origin = [int(rng.integers(0, n - size + 1)) for n in shape]
    sl = tuple(slice(o, o + size) for o in origin)
    crops = [p[sl] for p in padded]
    return np.stack(crops[:4]), crops[4], crops[5]


def _sample_loss(model, segmenter, case: Stage2Case, channels, syn, labels, cfg: RefinerTrainConfig):
    ctx = torch.as_tensor(channels)[None]
    syn_t = torch.as_tensor(syn)[None, None]
    lab = torch.as_tensor(labels)[None]
    t = case.target.index
    available = {m: ctx[:, m.index:m.index + 1] for m in MODALITIES if m != case.target}
    refined, _ = model(syn_t, case.target, available)
    return refiner_loss(refined, ctx[:, t:t + 1], lab, segmenter, ctx, t, cfg.lambda_ssim, cfg.lambda_dice)


def volume_dice(model: Optional[Refiner], segmenter: ProxySegmenter, case: Stage2Case) -> Dict[str, float]:
    """Region Dice of the segmenter when the target channel is the (refined) synthesized volume."""
    syn = case.synthesized
    if model is not None:
        avail = {m: case.channels[m.index] for m in MODALITIES if m != case.target}
        syn = refine(model, syn, case.target, avail)
    channels = case.channels.copy()
    channels[case.target.index] = syn
    pred, _ = segment(segmenter, channels)
    gt = compose_regions(case.labels)
    pr = compose_regions(pred)
    return {r: dice(pr[r], gt[r]) for r in ("WT", "TC", "ET")}


def train_refiner(
    cases: Sequence[Stage2Case],
    segmenter: ProxySegmenter,
    refiner_cfg: RefinerConfig = None,
    cfg: RefinerTrainConfig = None,
    val_cases: Sequence[Stage2Case] = (),
    out_dir=None,
) -> Tuple[Refiner, List[dict]]:
    """Train the Refiner on random aligned patches; one checkpoint per epoch under ``out_dir``."""
    if not cases:
        raise ValueError("no refiner training cases")
    if any(c.labels is None for c in cases):
        raise ValueError("refiner training needs labels")
    cfg = cfg or RefinerTrainConfig()
    refiner_cfg = refiner_cfg or RefinerConfig(patch_size=cfg.patch_size)
    segmenter.freeze()
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = Refiner(refiner_cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    out_dir = Path(out_dir) if out_dir is not None else None
    pool = [i for i in range(len(cases)) for _ in range(cfg.patches_per_case)]
    history, step = [], 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = rng.permutation(pool)
        for k in range(0, len(order), cfg.batch_size):
            batch = order[k:k + cfg.batch_size]
            opt.zero_grad(set_to_none=True)
            totals, terms = [], {"ssim": [], "dice": []}
            for i in batch:
                case = cases[i]
                channels, syn, labels = _crop_case(case, cfg.patch_size, rng)
                total, parts = _sample_loss(model, segmenter, case, channels, syn, labels, cfg)
                (total / len(batch)).backward()
                totals.append(float(total.detach()))
                for name, v in parts.items():
                    terms[name].append(float(v.detach()))
            opt.step()
            history.append({"epoch": epoch, "step": step, "total": float(np.mean(totals)),
                            "ssim": float(np.mean(terms["ssim"])), "dice": float(np.mean(terms["dice"])),
                            "val_dice": ""})
            step += 1
        if val_cases and (epoch % cfg.val_every == 0 or epoch == cfg.epochs):
            scores = [np.mean(list(volume_dice(model, segmenter, c).values())) for c in val_cases]
            history[-1]["val_dice"] = float(np.mean(scores))
        log.info("refiner epoch %d: loss=%.4f val_dice=%s", epoch, history[-1]["total"], history[-1]["val_dice"])
        if out_dir is not None:
            save_checkpoint(out_dir / f"refiner_epoch{epoch:03d}.pt", "refiner",
                            {"refiner": refiner_cfg.to_dict(), "train": asdict(cfg)}, model, epoch, rng,
                            modality_order=list(refiner_cfg.modality_order))
    if out_dir is not None:
        write_history(out_dir / "refiner_loss.csv", history)
    model.eval()
    return model, history

"""Stage-1 slice dataset and adversarial training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from ..checkpoint import save_checkpoint
from ..intensity import median_brain_intensity
from ..volumes import MODALITIES, MultiModalStudy, extract_axial_slices, linear_rescale, scaled_min_brain_pixels
from .losses import Stage1LossWeights, Stage1Outputs, discriminator_loss, generator_loss
from .model import GeneratorConfig, Stage1Model

log = logging.getLogger(__name__)


@dataclass
class Stage1TrainConfig:
    epochs: int = 20
    batch_size: int = 24
    lr: float = 2e-4
    betas: Tuple[float, float] = (0.5, 0.999)
    min_brain_pixels: Optional[int] = None
    max_steps_per_epoch: Optional[int] = None
    seed: int = 0


@dataclass
class SliceDataset:
    slices: np.ndarray      # (N, 4, H, W) on the [-1, 1] scale
    tumor: np.ndarray       # (N, 1, H, W) whole-tumor mask
    medians: np.ndarray     # (N, 4) per-volume median brain intensity
    case_ids: List[str] = field(default_factory=list)

    def __len__(self):
        return len(self.slices)


def normalize_study(study: MultiModalStudy) -> Tuple[Dict, Dict]:
    """[-1, 1]-rescaled arrays and per-volume median brain intensity for every modality."""
    norm, medians = {}, {}
    for m, vol in study.volumes.items():
        scaled = linear_rescale(vol, -1.0, 1.0).data
        norm[m] = scaled
        medians[m] = median_brain_intensity(scaled, vol.data != 0)
    return norm, medians


def build_slice_dataset(studies: Sequence[MultiModalStudy], min_brain_pixels: Optional[int] = None) -> SliceDataset:
    xs, ts, meds, ids = [], [], [], []
    for study in studies:
        missing = [m.value for m in MODALITIES if m not in study.volumes]
        if missing or study.labels is None:
            raise ValueError(f"{study.case_id}: stage-1 training needs all modalities and labels")
        _, h, w = study.shape
        thr = scaled_min_brain_pixels(h, w) if min_brain_pixels is None else min_brain_pixels
        norm, medians = normalize_study(study)
        wt = study.labels.data > 0
        for row in extract_axial_slices(study, thr):
            d = next(iter(row.values())).index
            xs.append(np.stack([norm[m][d] for m in MODALITIES]))
            ts.append(wt[d][None])
            meds.append([medians[m] for m in MODALITIES])
            ids.append(study.case_id)
    if not xs:
        raise ValueError("no slices passed the brain-pixel filter")
    return SliceDataset(np.asarray(xs, np.float32), np.asarray(ts, bool), np.asarray(meds, np.float32), ids)


def _random_choices(rng: np.random.Generator, batch: int):
    target = rng.integers(0, 4, size=batch)
    # cycle source: one of the three remaining modalities
    offset = rng.integers(1, 4, size=batch)
    return target, (target + offset) % 4


def stage1_outputs(model: Stage1Model, slices, medians, target_idx, cycle_idx) -> Stage1Outputs:
    """One generator pass with teacher and cycle branches for a batch."""
    gen = model.generator
    b = slices.shape[0]
    rows = torch.arange(b)
    present = torch.ones(b, 4, dtype=torch.bool)
    present[rows, target_idx] = False
    intensity = medians[rows, target_idx]
    fake, fused = gen(slices, present, target_idx, intensity)
    with torch.no_grad():
        teacher = gen.fuse(slices, torch.ones_like(present))

    cyc_inputs = slices.clone()
    cyc_inputs[rows, target_idx] = fake[:, 0]
    cyc_present = torch.ones_like(present)
    cyc_present[rows, cycle_idx] = False
    cycle_fake, _ = gen(cyc_inputs, cyc_present, cycle_idx, medians[rows, cycle_idx])

    d_adv, d_cls = model.discriminator(fake)
    target = slices[rows, target_idx][:, None]
    cycle_real = slices[rows, cycle_idx][:, None]
    return Stage1Outputs(fake, target, fused, teacher, cycle_fake, cycle_real, d_adv, d_cls, target_idx)


def _batch_tensors(ds: SliceDataset, idx, dtype=torch.float32):
    return (torch.as_tensor(ds.slices[idx], dtype=dtype),
            torch.as_tensor(ds.tumor[idx]),
            torch.as_tensor(ds.medians[idx], dtype=dtype))


def fixed_batch_loss(model: Stage1Model, ds: SliceDataset, weights: Stage1LossWeights,
                     n: int = 32, seed: int = 1234) -> float:
    """Generator loss on a fixed subset with fixed target/cycle choices (eval mode)."""
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(ds), size=min(n, len(ds)), replace=False))
    slices, tumor, medians = _batch_tensors(ds, idx)
    target, cycle = (torch.as_tensor(a) for a in _random_choices(rng, len(idx)))
    was_training = model.training
    model.eval()
    with torch.no_grad():
        out = stage1_outputs(model, slices, medians, target, cycle)
        total, _ = generator_loss(out, tumor, weights)
    model.train(was_training)
    return float(total)


def train_stage1(
    dataset: SliceDataset,
    gen_cfg: GeneratorConfig = None,
    weights: Stage1LossWeights = None,
    cfg: Stage1TrainConfig = None,
    out_dir=None,
) -> Tuple[Stage1Model, List[dict]]:
    """Train generator and discriminator; one checkpoint per epoch under ``out_dir``.

    Each sample draws its own target modality, which is hidden from the
    generator inputs. Returns the model and one history row per step.
    """
    if len(dataset) == 0:
        raise ValueError("empty training dataset")
    gen_cfg = gen_cfg or GeneratorConfig(slice_size=dataset.slices.shape[2:])
    weights = weights or Stage1LossWeights()
    cfg = cfg or Stage1TrainConfig()
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = Stage1Model(gen_cfg)
    opt_g = torch.optim.Adam(model.generator.parameters(), lr=cfg.lr, betas=tuple(cfg.betas))
    opt_d = torch.optim.Adam(model.discriminator.parameters(), lr=cfg.lr, betas=tuple(cfg.betas))
    out_dir = Path(out_dir) if out_dir is not None else None
    history, step = [], 0
    n = len(dataset)
    steps_per_epoch = int(np.ceil(n / cfg.batch_size))
    if cfg.max_steps_per_epoch:
        steps_per_epoch = min(steps_per_epoch, cfg.max_steps_per_epoch)

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = rng.permutation(n)
        for k in range(steps_per_epoch):
            idx = np.sort(order[k * cfg.batch_size:(k + 1) * cfg.batch_size])
            slices, tumor, medians = _batch_tensors(dataset, idx)
            target, cycle = (torch.as_tensor(a) for a in _random_choices(rng, len(idx)))

            out = stage1_outputs(model, slices, medians, target, cycle)
            g_total, terms = generator_loss(out, tumor, weights)
            opt_g.zero_grad(set_to_none=True)
            g_total.backward()
            opt_g.step()

            adv_real, cls_real = model.discriminator(out.target)
            adv_fake, _ = model.discriminator(out.fake.detach())
            d_total = discriminator_loss(adv_real, cls_real, adv_fake, target)
            opt_d.zero_grad(set_to_none=True)
            d_total.backward()
            opt_d.step()

            row = {"epoch": epoch, "step": step, "g_total": float(g_total.detach()), "d_total": float(d_total.detach())}
            row.update({f"g_{k}": float(v.detach()) for k, v in terms.items()})
            history.append(row)
            step += 1
        log.info("stage1 epoch %d: g=%.4f d=%.4f", epoch, history[-1]["g_total"], history[-1]["d_total"])
        if out_dir is not None:
            save_checkpoint(out_dir / f"stage1_epoch{epoch:03d}.pt", "stage1",
                            {"generator": gen_cfg.to_dict(), "weights": weights.as_dict(), "train": asdict(cfg)},
                            model, epoch, rng)
    if out_dir is not None:
        write_history(out_dir / "stage1_loss.csv", history)
    model.eval()
    return model, history


def write_history(path, history: List[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(history[0].keys()))
        writer.writeheader()
        writer.writerows(history)


def load_stage1(payload: dict) -> Stage1Model:
    cfg = GeneratorConfig(**payload["config"]["generator"])
    model = Stage1Model(cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model

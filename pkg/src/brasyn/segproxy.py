"""Small frozen 3D tumor segmenter used in place of an external pretrained model.

Input: the four z-normalized modalities stacked as channels (T1, T2, FLAIR,
T1ce). Output: logits for background / necrotic / edema / enhancing.
"""

from __future__ import annotations

import logging
from typing import List, Sequence, Tuple

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .checkpoint import save_checkpoint
from .losses import soft_dice_loss
from .volumes import MODALITIES, LabelMap, MultiModalStudy, pad_to_multiple, znorm_nonzero

log = logging.getLogger(__name__)


def _block(cin, cout):
    return nn.Sequential(nn.Conv3d(cin, cout, 3, padding=1), nn.LeakyReLU(0.1),
                         nn.Conv3d(cout, cout, 3, padding=1), nn.LeakyReLU(0.1))


class ProxySegmenter(nn.Module):
    def __init__(self, widths: Sequence[int] = (8, 16, 32)):
        super().__init__()
        if max(widths) > 32:
            raise ValueError("proxy segmenter widths are capped at 32")
        self.widths = tuple(widths)
        self.enc = nn.ModuleList()
        cin = len(MODALITIES)
        for w in widths:
            self.enc.append(_block(cin, w))
            cin = w
        self.dec = nn.ModuleList([_block(widths[i + 1] + widths[i], widths[i]) for i in range(len(widths) - 1)])
        self.head = nn.Conv3d(widths[0], 4, 1)
        self.frozen = False

    def forward(self, x):
        skips = []
        h = x
        for i, enc in enumerate(self.enc):
            if i > 0:
                h = F.max_pool3d(h, 2)
            h = enc(h)
            skips.append(h)
        for i in reversed(range(len(self.dec))):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = self.dec[i](torch.cat([h, skips[i]], dim=1))
        return self.head(h)

    def freeze(self) -> "ProxySegmenter":
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()
        self.frozen = True
        return self

    def train(self, mode: bool = True):
        # a frozen segmenter stays in eval mode
        return super().train(mode and not self.frozen)


def study_channels(study: MultiModalStudy) -> np.ndarray:
    """(4, D, H, W) z-normalized input stack; every modality must be present."""
    missing = [m.value for m in MODALITIES if m not in study.volumes]
    if missing:
        raise ValueError(f"segmenter input missing channels: {missing}")
    return np.stack([znorm_nonzero(study.volumes[m]).data for m in MODALITIES]).astype(np.float32)


def segment(model: ProxySegmenter, channels) -> Tuple[LabelMap, np.ndarray]:
    """Label map and (4, D, H, W) class probabilities for one (4, D, H, W) input."""
    if isinstance(channels, MultiModalStudy):
        channels = study_channels(channels)
    channels = np.asarray(channels)
    if channels.ndim != 4 or channels.shape[0] != len(MODALITIES):
        raise ValueError(f"expected (4, D, H, W) input, got {channels.shape}")
    step = 2 ** (len(model.widths) - 1)
    padded, crop = pad_to_multiple(channels, step)
    model.eval()
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        probs = torch.softmax(model(torch.as_tensor(padded, dtype=dtype)[None]), dim=1)[0].numpy()
    probs = probs[(slice(None),) + crop[1:]]
    return LabelMap(probs.argmax(axis=0).astype(np.int16)), probs


def train_proxy(
    studies: Sequence[MultiModalStudy],
    epochs: int = 30,
    rng_seed: int = 0,
    patch_size: int = 32,
    batch_size: int = 4,
    patches_per_case: int = 2,
    lr: float = 3e-3,
    widths: Sequence[int] = (8, 16, 32),
    out_path=None,
) -> Tuple[ProxySegmenter, List[dict]]:
    """Train on labeled studies with cross-entropy + soft Dice; returns the frozen model."""
    if not studies:
        raise ValueError("no training studies")
    if any(s.labels is None for s in studies):
        raise ValueError("proxy segmenter training needs labeled studies")
    torch.manual_seed(rng_seed)
    rng = np.random.default_rng(rng_seed)
    inputs = [study_channels(s) for s in studies]
    labels = [s.labels.data for s in studies]
    model = ProxySegmenter(widths)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    history = []
    pool = [i for i in range(len(studies)) for _ in range(patches_per_case)]
    for epoch in range(1, epochs + 1):
        model.train()
        order = rng.permutation(pool)
        losses = []
        for k in range(0, len(order), batch_size):
            xs, ys = [], []
            for i in order[k:k + batch_size]:
                x_patch, y_patch = _crop(inputs[i], labels[i], patch_size, rng)
                xs.append(x_patch)
                ys.append(y_patch)
            x = torch.as_tensor(np.stack(xs))
            y = torch.as_tensor(np.stack(ys)).long()
            logits = model(x)
            loss = F.cross_entropy(logits, y) + soft_dice_loss(torch.softmax(logits, 1), y)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        history.append({"epoch": epoch, "loss": float(np.mean(losses))})
        log.info("proxy epoch %d loss %.4f", epoch, history[-1]["loss"])
    model.freeze()
    if out_path is not None:
        save_checkpoint(out_path, "segproxy", {"widths": list(widths), "epochs": epochs, "seed": rng_seed},
                        model, epochs, rng, frozen=True)
    return model, history


def _crop(x: np.ndarray, y: np.ndarray, size: int, rng: np.random.Generator):
    """Random aligned crop of a (C, D, H, W) input and its label map; biased half the time toward tumor."""
    shape = np.asarray(x.shape[1:])
    size = min(size, int(shape.min()))
    if rng.random() < 0.5 and (y > 0).any():
        fg = np.argwhere(y > 0)
        center = fg[rng.integers(len(fg))]
        origin = np.clip(center - size // 2, 0, shape - size)
    else:
        origin = np.array([rng.integers(0, n - size + 1) for n in shape])
    sl = tuple(slice(int(o), int(o) + size) for o in origin)
    return x[(slice(None),) + sl], y[sl]


def load_proxy(payload: dict) -> ProxySegmenter:
    model = ProxySegmenter(payload["config"]["widths"])
    model.load_state_dict(payload["state_dict"])
    return model.freeze()

"""Stage-2 Refiner: per-modality 3D U-Net encoders, element-wise cross-attention, residual decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import torch
from torch import nn

from ..volumes import MODALITIES, Modality, Volume, pad_to_multiple

DEFAULT_ORDER = tuple(m.value for m in MODALITIES)


@dataclass
class RefinerConfig:
    channels: int = 64
    unet_depth: int = 3
    ff_expansion: int = 2
    decoder_layers: int = 3
    modality_order: Tuple[str, ...] = DEFAULT_ORDER
    patch_size: int = 128

    def __post_init__(self):
        self.modality_order = tuple(Modality.parse(m).value for m in self.modality_order)
        if sorted(self.modality_order) != sorted(DEFAULT_ORDER):
            raise ValueError("modality_order must be a permutation of the four modalities")
        if self.channels < 1 or self.unet_depth < 0 or self.ff_expansion < 1:
            raise ValueError("invalid refiner dimensions")

    def to_dict(self):
        return asdict(self)


@dataclass
class FeatureField:
    data: torch.Tensor        # (C, D, H, W) or batched (B, C, D, H, W)
    source: Modality
    synthesized: bool = False


def _act():
    return nn.LeakyReLU(0.2)


class UNetEncoder3D(nn.Module):
    """Resolution-preserving U-Net: stride-2 downsampling, nearest upsampling, skip concatenation."""

    def __init__(self, channels: int = 64, depth: int = 3):
        super().__init__()
        c = channels
        self.depth = depth
        self.stem = nn.Sequential(nn.Conv3d(1, c, 3, padding=1), _act())
        self.down = nn.ModuleList([
            nn.Sequential(nn.Conv3d(c, c, 3, stride=2, padding=1), _act(), nn.Conv3d(c, c, 3, padding=1), _act())
            for _ in range(depth)])
        self.up = nn.ModuleList([nn.Sequential(nn.Conv3d(2 * c, c, 3, padding=1), _act()) for _ in range(depth)])

    def forward(self, x):
        step = 2 ** self.depth
        if any(s % step for s in x.shape[2:]):
            raise ValueError(f"spatial dims {tuple(x.shape[2:])} not divisible by {step}")
        h = self.stem(x)
        skips = []
        for down in self.down:
            skips.append(h)
            h = down(h)
        for up, skip in zip(self.up, reversed(skips)):
            h = nn.functional.interpolate(h, scale_factor=2, mode="nearest")
            h = up(torch.cat([h, skip], dim=1))
        return h


def elementwise_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """exp(-|q - k|) * v, element by element."""
    return torch.exp(-torch.abs(q - k)) * v


class ElementwiseCrossAttention(nn.Module):
    """Per-voxel, per-channel cross-attention between a synthesized and an available feature.

    Features are flattened to (M, C) tokens and layer-normalized; the query is
    projected from the synthesized stream, key and value from the available
    stream. The weighted value is added to the input feature, then a 1x1x1
    feed-forward block is added on top.
    """

    def __init__(self, channels: int, ff_expansion: int = 2, norm: bool = True):
        super().__init__()
        self.norm_q = nn.LayerNorm(channels) if norm else nn.Identity()
        self.norm_kv = nn.LayerNorm(channels) if norm else nn.Identity()
        self.q = nn.Linear(channels, channels)
        self.k = nn.Linear(channels, channels)
        self.v = nn.Linear(channels, channels)
        hidden = channels * ff_expansion
        self.ff = nn.Sequential(nn.Conv3d(channels, hidden, 1), nn.GELU(), nn.Conv3d(hidden, channels, 1))

    def attend(self, f_syn: torch.Tensor, f_avail: torch.Tensor):
        """Return (F + attention, weights, values) before the feed-forward step."""
        if f_syn.shape != f_avail.shape:
            raise ValueError(f"feature shape mismatch {tuple(f_syn.shape)} vs {tuple(f_avail.shape)}")
        b, c = f_syn.shape[:2]
        spatial = f_syn.shape[2:]
        x = f_syn.flatten(2).transpose(1, 2)
        y = f_avail.flatten(2).transpose(1, 2)
        q = self.q(self.norm_q(x))
        ykv = self.norm_kv(y)
        k, v = self.k(ykv), self.v(ykv)
        weights = torch.exp(-torch.abs(q - k))
        attn = weights * v

        def back(t):
            return t.transpose(1, 2).reshape(b, c, *spatial)

        return f_syn + back(attn), back(weights), back(v)

    def forward(self, f_syn, f_avail):
        f1, _, _ = self.attend(f_syn, f_avail)
        return f1 + self.ff(f1)


class ResidualDecoder(nn.Module):
    def __init__(self, channels: int, layers: int = 3):
        super().__init__()
        body = []
        for _ in range(layers):
            body += [nn.Conv3d(channels, channels, 3, padding=1), _act()]
        self.body = nn.Sequential(*body)
        self.head = nn.Conv3d(channels, 1, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, f):
        return self.head(self.body(f))


class Refiner(nn.Module):
    def __init__(self, cfg: RefinerConfig = None):
        super().__init__()
        self.cfg = cfg or RefinerConfig()
        c = self.cfg.channels
        self.encoders = nn.ModuleDict({m.value: UNetEncoder3D(c, self.cfg.unet_depth) for m in MODALITIES})
        self.attention = nn.ModuleDict({m.value: ElementwiseCrossAttention(c, self.cfg.ff_expansion)
                                        for m in MODALITIES})
        self.decoder = ResidualDecoder(c, self.cfg.decoder_layers)

    @property
    def order(self) -> Tuple[Modality, ...]:
        return tuple(Modality(m) for m in self.cfg.modality_order)

    def forward(self, syn: torch.Tensor, target: Modality, available: Dict[Modality, torch.Tensor]):
        """Refine ``syn`` (B, 1, D, H, W); returns (refined, residual)."""
        target = Modality.parse(target)
        available = {Modality.parse(m): x for m, x in available.items()}
        if target in available:
            raise ValueError(f"target {target.value} is also listed as available")
        if not available:
            raise ValueError("at least one available modality is required")
        feat = self.encoders[target.value](syn)
        for m in self.order:
            if m in available:
                feat = self.attention[m.value](feat, self.encoders[m.value](available[m]))
        residual = self.decoder(feat)
        return syn + residual, residual


def _as_tensor(x, dtype):
    arr = x.data if isinstance(x, Volume) else x
    t = torch.as_tensor(np.asarray(arr) if not torch.is_tensor(arr) else arr, dtype=dtype)
    while t.dim() < 5:
        t = t.unsqueeze(0)
    return t


def encode(model: Refiner, patch, modality: Modality, synthesized: bool = False) -> FeatureField:
    """Encode a single 3D patch with the encoder of ``modality``."""
    modality = Modality.parse(modality)
    if isinstance(patch, Volume) and patch.modality is not None and patch.modality != modality:
        raise ValueError(f"{patch.modality.value} patch passed to the {modality.value} encoder")
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        feat = model.encoders[modality.value](_as_tensor(patch, dtype))[0]
    return FeatureField(feat, modality, synthesized)


def elementwise_cross_attention(model: Refiner, f_syn: FeatureField, f_avail: FeatureField) -> FeatureField:
    if not f_syn.synthesized:
        raise ValueError("first feature must come from the synthesized volume")
    if f_syn.data.shape != f_avail.data.shape:
        raise ValueError("feature shape mismatch")
    block = model.attention[f_avail.source.value]
    with torch.no_grad():
        out = block(f_syn.data[None], f_avail.data[None])[0]
    return FeatureField(out, f_syn.source, True)


def refine(model: Refiner, syn, target: Modality, available: Dict[Modality, object]) -> np.ndarray:
    """Refine one synthesized 3D array given aligned available arrays (eval mode, no grad).

    Arrays whose sides are not multiples of the encoder stride are zero-padded
    at the far end and cropped back afterwards.
    """
    model.eval()
    dtype = next(model.parameters()).dtype
    step = 2 ** model.cfg.unet_depth

    def prep(x):
        arr = np.asarray(x.data if isinstance(x, Volume) else x, dtype=np.float32)
        return _as_tensor(pad_to_multiple(arr, step)[0], dtype)

    crop = pad_to_multiple(np.asarray(syn.data if isinstance(syn, Volume) else syn), step)[1]
    with torch.no_grad():
        out, _ = model(prep(syn), target, {m: prep(v) for m, v in available.items()})
    return out[0, 0].cpu().numpy()[crop]


def load_refiner(payload: dict) -> Refiner:
    cfg = RefinerConfig(**payload["config"]["refiner"])
    model = Refiner(cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model

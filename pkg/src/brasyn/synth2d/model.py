"""Stage-1 2D generator and discriminator.

Layout: one conv encoder per modality, channel-attention fusion into a common
latent space, a modality infuser (residual blocks modulated by the joint
modality + intensity code) and a transposed-conv decoder with tanh output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Tuple

import torch
from torch import nn

from ..intensity import ConditionEncoder
from ..volumes import MODALITIES

N_MOD = len(MODALITIES)


@dataclass
class GeneratorConfig:
    base_channels: int = 32
    latent_channels: int = 64
    infuser_blocks: int = 4
    embedding_width: int = 128
    sin_width: int = 64
    slice_size: Tuple[int, int] = (64, 64)
    n_down: int = 2
    use_intensity: bool = True

    def __post_init__(self):
        self.slice_size = tuple(int(s) for s in self.slice_size)
        for name in ("base_channels", "latent_channels", "infuser_blocks", "embedding_width", "n_down"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        step = 2 ** self.n_down
        if any(s % step for s in self.slice_size):
            raise ValueError(f"slice size {self.slice_size} not divisible by {step}")

    def to_dict(self):
        return asdict(self)


def _act():
    return nn.LeakyReLU(0.2)


class SliceEncoder(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        ch = cfg.base_channels
        layers = [nn.Conv2d(1, ch, 3, padding=1), _act()]
        for i in range(cfg.n_down):
            out = cfg.latent_channels if i == cfg.n_down - 1 else ch * 2
            layers += [nn.Conv2d(ch, out, 4, stride=2, padding=1), _act()]
            ch = out
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class ChannelAttentionFusion(nn.Module):
    """Per-channel softmax over the present modalities of pooled descriptors."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(channels // reduction, 4)
        self.score = nn.Sequential(nn.Linear(channels, hidden), _act(), nn.Linear(hidden, channels))

    def forward(self, feats: torch.Tensor, present: torch.Tensor) -> torch.Tensor:
        # feats: (B, M, C, h, w); present: (B, M) bool
        scores = self.score(feats.mean(dim=(3, 4)))
        scores = scores.masked_fill(~present[:, :, None], float("-inf"))
        weights = torch.softmax(scores, dim=1)
        return (weights[..., None, None] * feats).sum(dim=1)


class FiLM(nn.Module):
    def __init__(self, cond_width: int, channels: int):
        super().__init__()
        self.proj = nn.Linear(cond_width, 2 * channels)

    def forward(self, x, cond):
        gamma, beta = self.proj(cond).chunk(2, dim=1)
        return x * (1 + gamma[..., None, None]) + beta[..., None, None]


class InfuserBlock(nn.Module):
    def __init__(self, channels: int, cond_width: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.film = FiLM(cond_width, channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = _act()

    def forward(self, x, cond):
        h = self.act(self.film(self.conv1(x), cond))
        return x + self.conv2(h)


class SliceDecoder(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        layers = []
        ch = cfg.latent_channels
        for i in range(cfg.n_down):
            out = cfg.base_channels * 2 ** (cfg.n_down - 1 - i)
            layers += [nn.ConvTranspose2d(ch, out, 4, stride=2, padding=1), nn.BatchNorm2d(out),
                       nn.ReLU()]
            ch = out
        layers += [nn.Conv2d(ch, 1, 3, padding=1), nn.Tanh()]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class Generator(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        self.encoders = nn.ModuleList([SliceEncoder(cfg) for _ in MODALITIES])
        self.fusion = ChannelAttentionFusion(cfg.latent_channels)
        self.condition = ConditionEncoder(cfg.embedding_width, cfg.sin_width, cfg.use_intensity)
        self.infuser = nn.ModuleList([InfuserBlock(cfg.latent_channels, cfg.embedding_width)
                                      for _ in range(cfg.infuser_blocks)])
        self.decoder = SliceDecoder(cfg)

    def fuse(self, slices: torch.Tensor, present: torch.Tensor) -> torch.Tensor:
        """Common-space feature from (B, 4, H, W) slices; absent channels are ignored."""
        feats = []
        for m, enc in enumerate(self.encoders):
            x = slices[:, m:m + 1] * present[:, m, None, None, None].to(slices.dtype)
            feats.append(enc(x) * present[:, m, None, None, None].to(slices.dtype))
        return self.fusion(torch.stack(feats, dim=1), present)

    def forward(self, slices, present, target_idx, intensity):
        fused = self.fuse(slices, present)
        cond = self.condition(target_idx, intensity)
        h = fused
        for block in self.infuser:
            h = block(h, cond)
        return self.decoder(h), fused


class Discriminator(nn.Module):
    """Patch real/fake head (least-squares targets) plus a 4-way modality head."""

    def __init__(self, base_channels: int = 32, n_layers: int = 3):
        super().__init__()
        layers, ch = [], 1
        for i in range(n_layers):
            out = base_channels * 2 ** i
            layers += [nn.Conv2d(ch, out, 4, stride=2, padding=1), _act()]
            ch = out
        self.body = nn.Sequential(*layers)
        self.adv = nn.Conv2d(ch, 1, 3, padding=1)
        self.cls = nn.Linear(ch, N_MOD)

    def forward(self, x):
        h = self.body(x)
        return self.adv(h), self.cls(h.mean(dim=(2, 3)))


class Stage1Model(nn.Module):
    def __init__(self, cfg: GeneratorConfig = None):
        super().__init__()
        self.cfg = cfg or GeneratorConfig()
        self.generator = Generator(self.cfg)
        self.discriminator = Discriminator(self.cfg.base_channels)

    def forward(self, slices, present, target_idx, intensity):
        return self.generator(slices, present, target_idx, intensity)

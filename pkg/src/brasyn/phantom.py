"""Deterministic multi-modal brain phantoms with nested tumors.

Every case is built from one scalar tissue field ``t`` in [0, 1]
(0 = CSF, ~0.45 = gray matter, ~0.9 = white matter). Each modality is a
strictly monotone map of ``t`` raised to a per-case exponent, so a single
modality determines ``t`` on healthy tissue. A tumor with edema (2),
enhancing rim (3) and necrotic core (1) is pasted on top with
modality-specific contrast.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from .volumes import MODALITIES, LabelMap, Modality, MultiModalStudy, Volume

# (offset, scale, exponent, sign): f(t) = offset + sign * scale * t**exponent
HEALTHY_MAPS: Dict[Modality, Tuple[float, float, float, float]] = {
    Modality.T1: (0.15, 0.85, 1.3, 1.0),
    Modality.T2: (0.95, 0.75, 0.8, -1.0),
    Modality.FLAIR: (0.80, 0.50, 1.1, -1.0),
    Modality.T1CE: (0.20, 0.60, 1.6, 1.0),
}

# Tumor intensity per modality for (necrotic, edema, enhancing); edema is
# expressed relative to the healthy value it replaces.
TUMOR_CONTRAST: Dict[Modality, Tuple[float, float, float]] = {
    Modality.T1: (0.12, 0.75, 0.50),
    Modality.T2: (1.25, 1.15, 0.70),
    Modality.FLAIR: (0.50, 1.20, 0.95),
    Modality.T1CE: (0.12, 0.95, 1.35),
}


@dataclass
class PhantomSpec:
    shape: Tuple[int, int, int] = (64, 64, 64)
    rng_seed: int = 0
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    brain_axes: Tuple[float, float, float] = (0.40, 0.44, 0.38)
    tumor_count: int = 1
    tumor_radius: Tuple[float, float] = (0.12, 0.20)
    core_fraction: float = 0.6
    necrosis_fraction: float = 0.35
    noise_std: float = 0.02
    smoothness: float = 4.0
    gamma_shared_std: float = 0.25
    gamma_own_std: float = 0.15
    tumor_gain_range: Tuple[float, float] = (0.85, 1.15)
    healthy_maps: Dict[Modality, Tuple[float, float, float, float]] = field(
        default_factory=lambda: dict(HEALTHY_MAPS))

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if len(self.shape) != 3 or min(self.shape) < 8:
            raise ValueError("phantom shape must be 3D with every axis >= 8")


def healthy_intensity(modality: Modality, t: np.ndarray, gamma: float = 1.0, maps=None) -> np.ndarray:
    off, scale, expo, sign = (maps or HEALTHY_MAPS)[Modality.parse(modality)]
    return (off + sign * scale * np.power(t, expo)) ** gamma


def invert_healthy_intensity(modality: Modality, value: np.ndarray, gamma: float = 1.0, maps=None) -> np.ndarray:
    """Recover the tissue field from one healthy-tissue modality value."""
    off, scale, expo, sign = (maps or HEALTHY_MAPS)[Modality.parse(modality)]
    base = np.power(value, 1.0 / gamma)
    return np.power(np.clip(sign * (base - off) / scale, 0.0, None), 1.0 / expo)


def _smooth_noise(rng, shape, sigma):
    field_ = gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return field_ / (field_.std() + 1e-12)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _normalized_grid(shape):
    axes = [(np.arange(n) + 0.5) / n - 0.5 for n in shape]
    return np.meshgrid(*axes, indexing="ij")


def generate_phantom(spec: PhantomSpec, case_id: str = None, return_tissue: bool = False):
    """Build one :class:`MultiModalStudy` (4 modalities + labels) from ``spec``.

    With ``return_tissue`` the noise-free tissue field is returned as well.
    """
    rng = np.random.default_rng(spec.rng_seed)
    shape = tuple(spec.shape)
    if spec.tumor_radius[1] > 0.6 * min(spec.brain_axes):
        raise ValueError("tumor cannot fit inside the brain ellipsoid")
    sigma = spec.smoothness * min(shape) / 64.0

    zz, yy, xx = _normalized_grid(shape)
    axes = np.asarray(spec.brain_axes) * rng.uniform(0.93, 1.05, size=3)
    r = np.sqrt((zz / axes[0]) ** 2 + (yy / axes[1]) ** 2 + (xx / axes[2]) ** 2)
    r = r * (1.0 + 0.05 * _smooth_noise(rng, shape, 2 * sigma))
    brain = r < 1.0
    depth = 1.0 - r

    # gray ribbon, white core, thin CSF shell, two ventricles, texture
    t = 0.45 + 0.45 * _sigmoid((depth - 0.16) / 0.025)
    t = t - 0.35 * _sigmoid((0.035 - depth) / 0.01)
    vent_off = rng.uniform(0.05, 0.08)
    for side in (-1.0, 1.0):
        rv = np.sqrt(((zz - 0.02) / 0.16) ** 2 + (yy / 0.20) ** 2 + ((xx - side * vent_off) / 0.05) ** 2)
        t = t - 0.8 * _sigmoid((1.0 - rv) / 0.08)
    t = t + 0.04 * _smooth_noise(rng, shape, sigma)
    t = np.clip(t, 0.02, 1.0)

    labels = np.zeros(shape, dtype=np.int16)
    weights = {k: np.zeros(shape) for k in ("edema", "core", "necrosis")}
    tumors = []
    for _ in range(spec.tumor_count):
        radius = rng.uniform(*spec.tumor_radius)
        radii = radius * rng.uniform(0.85, 1.15, size=3)
        # keep the whole tumor inside the brain
        room = 1.0 - 1.25 * radius / float(np.min(axes))
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        center = direction * axes * room * rng.uniform(0.2, 0.85)
        rho = np.sqrt(((zz - center[0]) / radii[0]) ** 2 + ((yy - center[1]) / radii[1]) ** 2
                      + ((xx - center[2]) / radii[2]) ** 2)
        rho = rho * (1.0 + 0.08 * _smooth_noise(rng, shape, sigma))
        rho = np.where(brain, rho, np.inf)
        wt = rho < 1.0
        tc = rho < spec.core_fraction
        nec = rho < spec.necrosis_fraction
        labels[wt & (labels == 0)] = 2
        labels[tc] = 3
        labels[nec] = 1
        soft = 0.04
        weights["edema"] = np.maximum(weights["edema"], _sigmoid((1.0 - rho) / soft))
        weights["core"] = np.maximum(weights["core"], _sigmoid((spec.core_fraction - rho) / soft))
        weights["necrosis"] = np.maximum(weights["necrosis"], _sigmoid((spec.necrosis_fraction - rho) / soft))
        tumors.append({"center": center.tolist(), "radius": float(radius),
                       "wt_voxels": int(wt.sum()), "et_voxels": int((tc & ~nec).sum())})

    shared = rng.standard_normal()
    gammas = {m: float(np.exp(spec.gamma_shared_std * shared + spec.gamma_own_std * rng.standard_normal()))
              for m in MODALITIES}
    gains = {m: float(rng.uniform(*spec.tumor_gain_range)) for m in MODALITIES}

    volumes = {}
    for m in MODALITIES:
        healthy = healthy_intensity(m, t, gammas[m], spec.healthy_maps)
        nec_c, ed_c, enh_c = TUMOR_CONTRAST[m]
        g = gains[m]
        img = healthy
        img = img + weights["edema"] * (healthy * ed_c * g - img)
        img = img + weights["core"] * (enh_c * g - img)
        img = img + weights["necrosis"] * (nec_c * g - img)
        if spec.noise_std > 0:
            img = img * (1.0 + spec.noise_std * rng.standard_normal(shape))
        img = np.where(brain, np.clip(img, 1e-3, None), 0.0).astype(np.float32)
        volumes[m] = Volume(img, spec.spacing, m)

    case_id = case_id or f"phantom_{spec.rng_seed:05d}"
    meta = {"seed": spec.rng_seed, "gammas": {m.value: gammas[m] for m in MODALITIES},
            "tumor_gains": {m.value: gains[m] for m in MODALITIES}, "tumors": tumors}
    study = MultiModalStudy(volumes, LabelMap(labels), case_id, meta)
    if return_tissue:
        return study, np.where(brain, t, 0.0)
    return study


def generate_corpus(n: int, base_seed: int = 0, spec: PhantomSpec = None, prefix: str = "phantom"):
    """``n`` studies seeded ``base_seed .. base_seed + n - 1`` and their manifest rows."""
    if n < 1:
        raise ValueError("corpus size must be >= 1")
    spec = spec or PhantomSpec()
    studies, manifest = [], []
    for i in range(n):
        seed = base_seed + i
        s = PhantomSpec(**{**asdict(spec), "rng_seed": seed})
        study = generate_phantom(s, case_id=f"{prefix}_{seed:05d}")
        studies.append(study)
        tumors = study.meta["tumors"]
        manifest.append({
            "case_id": study.case_id,
            "seed": seed,
            "wt_voxels": sum(t["wt_voxels"] for t in tumors),
            "et_voxels": sum(t["et_voxels"] for t in tumors),
            "tumor_radius": round(float(np.mean([t["radius"] for t in tumors])), 6),
        })
    return studies, manifest


def write_manifest(path, rows: List[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)

"""Volume data model and preprocessing.

Volumes are stored as ``D x H x W`` float32 arrays where ``D`` is the axial
(slice) axis. The brain mask of a raw volume is its set of non-zero voxels;
inputs are assumed skull-stripped with background exactly 0.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np


class Modality(str, enum.Enum):
    T1 = "t1"
    T2 = "t2"
    FLAIR = "flair"
    T1CE = "t1ce"

    @property
    def index(self) -> int:
        return MODALITIES.index(self)

    @classmethod
    def parse(cls, value) -> "Modality":
        if isinstance(value, Modality):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown modality {value!r}") from None


MODALITIES: Tuple[Modality, ...] = (Modality.T1, Modality.T2, Modality.FLAIR, Modality.T1CE)

LABEL_VALUES = (0, 1, 2, 3)
REGIONS = ("WT", "TC", "ET")


@dataclass
class Volume:
    data: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    modality: Optional[Modality] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError(f"volume must be 3D with non-empty axes, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("volume contains non-finite values")
        self.spacing = tuple(float(s) for s in self.spacing)
        if self.modality is not None:
            self.modality = Modality.parse(self.modality)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return tuple(self.data.shape)

    def brain_mask(self) -> np.ndarray:
        return self.data != 0

    def replace(self, data: np.ndarray, **meta) -> "Volume":
        return Volume(data, self.spacing, self.modality, {**self.meta, **meta})


@dataclass
class LabelMap:
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError("label map must be 3D")
        bad = np.setdiff1d(np.unique(self.data), LABEL_VALUES)
        if bad.size:
            raise ValueError(f"unknown label values {bad.tolist()}")
        self.data = self.data.astype(np.int16)

    @property
    def shape(self):
        return tuple(self.data.shape)


@dataclass
class MultiModalStudy:
    volumes: Dict[Modality, Volume]
    labels: Optional[LabelMap] = None
    case_id: str = "case"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.volumes = {Modality.parse(m): v for m, v in self.volumes.items()}
        shapes = {v.shape for v in self.volumes.values()}
        spacings = {v.spacing for v in self.volumes.values()}
        if len(shapes) > 1 or len(spacings) > 1:
            raise ValueError(f"study {self.case_id}: volumes disagree in shape/spacing")
        if self.labels is not None and shapes and self.labels.shape not in shapes:
            raise ValueError(f"study {self.case_id}: label shape {self.labels.shape} != {shapes}")

    @property
    def shape(self) -> Tuple[int, int, int]:
        if self.volumes:
            return next(iter(self.volumes.values())).shape
        return self.labels.shape

    @property
    def spacing(self) -> Tuple[float, float, float]:
        return next(iter(self.volumes.values())).spacing

    @property
    def modalities(self) -> List[Modality]:
        return [m for m in MODALITIES if m in self.volumes]

    def brain_mask(self) -> np.ndarray:
        """Union of non-zero voxels over every present modality."""
        mask = np.zeros(self.shape, dtype=bool)
        for vol in self.volumes.values():
            mask |= vol.data != 0
        return mask

    def without(self, modality: Modality) -> "MultiModalStudy":
        modality = Modality.parse(modality)
        vols = {m: v for m, v in self.volumes.items() if m != modality}
        return MultiModalStudy(vols, self.labels, self.case_id, dict(self.meta))


@dataclass
class AxialSlice:
    data: np.ndarray
    index: int
    brain_pixel_count: int


@dataclass
class Patch:
    data: np.ndarray
    origin: Tuple[int, int, int]


def linear_rescale(vol: Volume, lo: float = -1.0, hi: float = 1.0) -> Volume:
    """Affinely map the volume's global [min, max] onto [lo, hi]."""
    if not hi > lo:
        raise ValueError("hi must exceed lo")
    data = vol.data.astype(np.float64)
    vmin, vmax = data.min(), data.max()
    if vmax == vmin:
        raise ValueError("degenerate intensity range")
    out = lo + (data - vmin) * ((hi - lo) / (vmax - vmin))
    return vol.replace(out.astype(np.float32))


def znorm_nonzero(vol: Volume) -> Volume:
    """Standardize the non-zero voxels; zero voxels stay exactly zero."""
    data = vol.data.astype(np.float64)
    mask = data != 0
    if mask.sum() < 2:
        raise ValueError("need at least two non-zero voxels")
    vals = data[mask]
    std = vals.std()
    if std == 0:
        raise ValueError("zero variance among non-zero voxels")
    out = np.zeros_like(data)
    out[mask] = (vals - vals.mean()) / std
    return vol.replace(out.astype(np.float32))


def scaled_min_brain_pixels(height: int, width: int, base: int = 2000, base_size: int = 240) -> int:
    """Brain-pixel threshold rescaled from a 240x240 reference slice."""
    return int(round(base * (height * width) / float(base_size * base_size)))


def extract_axial_slices(
    study: MultiModalStudy,
    min_brain_pixels: int = 2000,
    modalities: Optional[Sequence[Modality]] = None,
    reference: Optional[Modality] = None,
) -> List[Dict[Modality, AxialSlice]]:
    """Aligned axial slices of every modality, filtered on the reference brain area.

    The brain-pixel count comes from the reference modality (first available
    by default), measured before any normalization. Slices with fewer than
    ``min_brain_pixels`` brain pixels are dropped.
    """
    modalities = [Modality.parse(m) for m in (modalities or study.modalities)]
    reference = Modality.parse(reference) if reference is not None else modalities[0]
    ref = study.volumes[reference].data
    counts = (ref != 0).reshape(ref.shape[0], -1).sum(axis=1)
    out = []
    for d in range(ref.shape[0]):
        if counts[d] < min_brain_pixels:
            continue
        row = {}
        for m in modalities:
            sl = study.volumes[m].data[d]
            row[m] = AxialSlice(sl, d, int(np.count_nonzero(sl)))
        out.append(row)
    return out


def stack_slices(
    slices: Sequence[np.ndarray],
    spacing=(1.0, 1.0, 1.0),
    modality: Optional[Modality] = None,
) -> Volume:
    if len(slices) == 0:
        raise ValueError("cannot stack an empty slice list")
    arrays = [np.asarray(s.data if isinstance(s, AxialSlice) else s) for s in slices]
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1 or len(arrays[0].shape) != 2:
        raise ValueError(f"slices must share one 2D shape, got {sorted(shapes)}")
    return Volume(np.stack(arrays, axis=0), spacing, modality)


def pad_to_size(data: np.ndarray, size: int) -> Tuple[np.ndarray, Tuple[int, int, int]]:
    """Zero-pad each axis symmetrically up to ``size``; returns array and leading pad."""
    pads = []
    for n in data.shape:
        total = max(size - n, 0)
        pads.append((total // 2, total - total // 2))
    if not any(p for pair in pads for p in pair):
        return data, (0, 0, 0)
    return np.pad(data, pads), tuple(p[0] for p in pads)


def pad_to_multiple(data: np.ndarray, step: int, axes: Sequence[int] = (-3, -2, -1)) -> Tuple[np.ndarray, Tuple[slice, ...]]:
    """Zero-pad the trailing end of ``axes`` to a multiple of ``step``.

    Returns the padded array and the index that crops it back to the input shape.
    """
    pads = [(0, 0)] * data.ndim
    for ax in axes:
        n = data.shape[ax]
        pads[ax] = (0, (-n) % step)
    crop = tuple(slice(0, n) for n in data.shape)
    if not any(p[1] for p in pads):
        return data, crop
    return np.pad(data, pads), crop


def random_crop_patch(
    study: MultiModalStudy,
    size: int,
    rng_seed=None,
    extra: Optional[Dict[str, np.ndarray]] = None,
) -> Dict[object, Patch]:
    """Crop one aligned cube from every modality, the label map, and ``extra`` arrays.

    ``rng_seed`` may be an int or a ``numpy.random.Generator``. Keys of the
    result are modalities, ``"labels"`` and the keys of ``extra``.
    """
    if size <= 0:
        raise ValueError("patch size must be positive")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    arrays: Dict[object, np.ndarray] = {m: v.data for m, v in study.volumes.items()}
    if study.labels is not None:
        arrays["labels"] = study.labels.data
    for k, a in (extra or {}).items():
        arrays[k] = a
    shape = np.asarray(study.shape)
    padded = {k: pad_to_size(a, size)[0] for k, a in arrays.items()}
    pshape = np.maximum(shape, size)
    origin = tuple(int(rng.integers(0, n - size + 1)) for n in pshape)
    sl = tuple(slice(o, o + size) for o in origin)
    return {k: Patch(a[sl], origin) for k, a in padded.items()}


def compose_regions(labels) -> Dict[str, np.ndarray]:
    """Nested tumor regions: ET = {3}, TC = {1, 3}, WT = {1, 2, 3}."""
    data = labels.data if isinstance(labels, LabelMap) else np.asarray(labels)
    bad = np.setdiff1d(np.unique(data), LABEL_VALUES)
    if bad.size:
        raise ValueError(f"unknown label values {bad.tolist()}")
    return {
        "WT": np.isin(data, (1, 2, 3)),
        "TC": np.isin(data, (1, 3)),
        "ET": data == 3,
    }

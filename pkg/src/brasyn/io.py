"""Reading and writing volumes and studies.

Two formats are supported: NIfTI-1 (``.nii`` / ``.nii.gz``; float32 data,
int16 labels) and a raw fallback (``.raw``) made of one UTF-8 header line
``"D H W modality"`` followed by little-endian float32 voxels in C order.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Optional, Union

import nibabel as nib
import numpy as np

from .volumes import MODALITIES, LabelMap, Modality, MultiModalStudy, Volume

PathLike = Union[str, os.PathLike]


def _is_nifti(path: Path) -> bool:
    return path.name.endswith(".nii") or path.name.endswith(".nii.gz")


def write_nifti(path: PathLike, data: np.ndarray, spacing=(1.0, 1.0, 1.0), dtype=np.float32) -> None:
    img = nib.Nifti1Image(np.asarray(data, dtype=dtype), np.diag([*spacing, 1.0]))
    img.header.set_data_dtype(dtype)
    img.header.set_zooms(tuple(float(s) for s in spacing))
    nib.save(img, str(path))


def read_nifti(path: PathLike):
    img = nib.load(str(path))
    data = np.asarray(img.dataobj)
    spacing = tuple(float(z) for z in img.header.get_zooms()[:3])
    return data, spacing


def write_raw(path: PathLike, vol: Volume) -> None:
    d, h, w = vol.shape
    mod = vol.modality.value if vol.modality is not None else "none"
    with open(path, "wb") as fh:
        fh.write(f"{d} {h} {w} {mod}\n".encode("utf-8"))
        fh.write(np.ascontiguousarray(vol.data, dtype="<f4").tobytes())


def read_raw(path: PathLike) -> Volume:
    with open(path, "rb") as fh:
        header = fh.readline().decode("utf-8").split()
        payload = fh.read()
    if len(header) != 4:
        raise ValueError(f"{path}: malformed raw header {header!r}")
    d, h, w = (int(x) for x in header[:3])
    data = np.frombuffer(payload, dtype="<f4")
    if data.size != d * h * w:
        raise ValueError(f"{path}: expected {d * h * w} voxels, found {data.size}")
    modality = None if header[3] == "none" else Modality.parse(header[3])
    return Volume(data.reshape(d, h, w).astype(np.float32), modality=modality)


def save_volume(path: PathLike, vol: Volume) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if _is_nifti(path):
        write_nifti(path, vol.data, vol.spacing)
        if vol.meta:
            _meta_path(path).write_text(json.dumps(vol.meta, sort_keys=True, default=float))
    elif path.suffix == ".raw":
        write_raw(path, vol)
    else:
        raise ValueError(f"unsupported volume extension: {path.name}")


def load_volume(path: PathLike, modality: Optional[Modality] = None) -> Volume:
    path = Path(path)
    if path.suffix == ".raw":
        vol = read_raw(path)
        if modality is not None:
            vol.modality = Modality.parse(modality)
        return vol
    if not _is_nifti(path):
        raise ValueError(f"unsupported volume extension: {path.name}")
    data, spacing = read_nifti(path)
    meta = {}
    if _meta_path(path).exists():
        meta = json.loads(_meta_path(path).read_text())
    return Volume(data.astype(np.float32), spacing, modality, meta)


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name.split(".nii")[0] + ".json")


def save_study(root: PathLike, study: MultiModalStudy) -> Path:
    """Write ``<root>/<case_id>/<case_id>_<modality>.nii.gz`` plus ``_seg``."""
    case_dir = Path(root) / study.case_id
    case_dir.mkdir(parents=True, exist_ok=True)
    for m, vol in study.volumes.items():
        write_nifti(case_dir / f"{study.case_id}_{m.value}.nii.gz", vol.data, vol.spacing)
    if study.labels is not None:
        write_nifti(case_dir / f"{study.case_id}_seg.nii.gz", study.labels.data, study.spacing, np.int16)
    if study.meta:
        (case_dir / "meta.json").write_text(json.dumps(study.meta, sort_keys=True, default=float))
    return case_dir


def load_study(case_dir: PathLike) -> MultiModalStudy:
    case_dir = Path(case_dir)
    case_id = case_dir.name
    volumes = {}
    for m in MODALITIES:
        p = case_dir / f"{case_id}_{m.value}.nii.gz"
        if p.exists():
            data, spacing = read_nifti(p)
            volumes[m] = Volume(data.astype(np.float32), spacing, m)
    labels = None
    seg = case_dir / f"{case_id}_seg.nii.gz"
    if seg.exists():
        labels = LabelMap(read_nifti(seg)[0].astype(np.int16))
    meta = {}
    if (case_dir / "meta.json").exists():
        meta = json.loads((case_dir / "meta.json").read_text())
    if not volumes and labels is None:
        raise FileNotFoundError(f"no volumes found in {case_dir}")
    return MultiModalStudy(volumes, labels, case_id, meta)


def list_cases(root: PathLike):
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"data directory {root} does not exist")
    return sorted(p for p in root.iterdir() if p.is_dir())

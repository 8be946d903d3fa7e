import numpy as np
import pytest
from scipy.ndimage import binary_dilation

from brasyn.intensity import volume_median_intensity
from brasyn.phantom import (
    PhantomSpec, generate_corpus, generate_phantom, healthy_intensity, invert_healthy_intensity,
    write_manifest,
)
from brasyn.volumes import MODALITIES, Modality, compose_regions


def test_deterministic_per_seed():
    a = generate_phantom(PhantomSpec(shape=(32, 32, 32), rng_seed=4))
    b = generate_phantom(PhantomSpec(shape=(32, 32, 32), rng_seed=4))
    for m in MODALITIES:
        assert a.volumes[m].data.tobytes() == b.volumes[m].data.tobytes()
    np.testing.assert_array_equal(a.labels.data, b.labels.data)


def test_structure(toy_study):
    brain = toy_study.volumes[Modality.T1].data != 0
    for m in MODALITIES:
        data = toy_study.volumes[m].data
        assert data.shape == (64, 64, 64)
        assert np.all(data[~brain] == 0)
        assert np.all(data[brain] > 0)
    r = compose_regions(toy_study.labels)
    assert r["ET"].any() and r["WT"].sum() > r["TC"].sum() > r["ET"].sum()
    assert np.all(r["ET"] <= r["TC"]) and np.all(r["TC"] <= r["WT"])
    assert np.all(brain[r["WT"]])


def test_modality_contrasts(toy_study):
    labels = toy_study.labels.data
    v = {m: toy_study.volumes[m].data for m in MODALITIES}
    healthy = (labels == 0) & (v[Modality.T1] != 0)
    edema = labels == 2
    enhancing = labels == 3
    assert np.median(v[Modality.FLAIR][edema]) > np.median(v[Modality.FLAIR][healthy])
    assert np.median(v[Modality.T1CE][enhancing]) > np.percentile(v[Modality.T1CE][healthy], 95)


def test_tissue_is_recoverable_from_any_modality():
    spec = PhantomSpec(shape=(32, 32, 32), rng_seed=2, noise_std=0.0)
    study, tissue = generate_phantom(spec, return_tissue=True)
    gammas = study.meta["gammas"]
    # stay clear of the tumor's soft blending margin
    near_tumor = binary_dilation(study.labels.data > 0, iterations=3)
    interior = ~near_tumor & (tissue > 0.05)
    for m in MODALITIES:
        est = invert_healthy_intensity(m, study.volumes[m].data, gammas[m.value])
        np.testing.assert_allclose(est[interior], tissue[interior], atol=1e-4)


def test_healthy_maps_are_invertible():
    t = np.linspace(0.02, 1.0, 50)
    for m in MODALITIES:
        np.testing.assert_allclose(invert_healthy_intensity(m, healthy_intensity(m, t, 1.3), 1.3), t, atol=1e-9)


def test_spec_validation():
    with pytest.raises(ValueError):
        PhantomSpec(noise_std=-1)
    with pytest.raises(ValueError, match="cannot fit"):
        generate_phantom(PhantomSpec(shape=(16, 16, 16), tumor_radius=(0.3, 0.5)))


def test_corpus_and_manifest(tmp_path):
    studies, rows = generate_corpus(8, 100, PhantomSpec(shape=(16, 16, 16)))
    assert len({s.case_id for s in studies}) == 8
    assert [r["seed"] for r in rows] == list(range(100, 108))
    other, _ = generate_corpus(2, 200, PhantomSpec(shape=(16, 16, 16)))
    assert not {s.case_id for s in other} & {s.case_id for s in studies}
    assert not np.array_equal(other[0].volumes[Modality.T1].data, studies[0].volumes[Modality.T1].data)
    write_manifest(tmp_path / "m.csv", rows)
    assert (tmp_path / "m.csv").read_text().splitlines()[0].startswith("case_id,seed")
    with pytest.raises(ValueError):
        generate_corpus(0)


def test_corpus_medians_vary():
    studies, _ = generate_corpus(100, 0, PhantomSpec(shape=(24, 24, 24)))
    for m in MODALITIES:
        medians = [volume_median_intensity(s.volumes[m]) for s in studies]
        assert np.std(medians) > 0.01

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from brasyn.volumes import (
    MODALITIES, LabelMap, Modality, MultiModalStudy, Volume, compose_regions, extract_axial_slices,
    linear_rescale, pad_to_multiple, pad_to_size, random_crop_patch, scaled_min_brain_pixels,
    stack_slices, znorm_nonzero,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, width=32)


def vol(data, modality=None):
    return Volume(np.asarray(data, dtype=np.float32).reshape(1, 1, -1) if np.ndim(data) == 1 else data,
                  modality=modality)


def test_modality_enum_has_four_members():
    assert len(Modality) == 4
    assert [m.index for m in MODALITIES] == [0, 1, 2, 3]
    assert Modality.parse("T1CE") is Modality.T1CE
    with pytest.raises(ValueError):
        Modality.parse("pd")


def test_volume_rejects_non_finite_and_bad_rank():
    with pytest.raises(ValueError):
        Volume(np.array([[[np.nan]]]))
    with pytest.raises(ValueError):
        Volume(np.zeros((4, 4)))


def test_study_rejects_mismatched_shapes():
    with pytest.raises(ValueError):
        MultiModalStudy({Modality.T1: Volume(np.ones((2, 2, 2))), Modality.T2: Volume(np.ones((2, 2, 3)))})


def test_label_map_rejects_unknown_values():
    with pytest.raises(ValueError):
        LabelMap(np.full((2, 2, 2), 4))


# linear_rescale

def test_rescale_midpoint_and_endpoints():
    data = np.linspace(0, 100, 101, dtype=np.float32)
    out = linear_rescale(vol(data)).data.ravel()
    assert out[50] == pytest.approx(0.0, abs=1e-6)
    assert out[0] == -1.0
    assert out[-1] == 1.0


def test_rescale_uniform_values():
    out = linear_rescale(vol(np.arange(5.0))).data.ravel()
    np.testing.assert_allclose(out, [-1, -0.5, 0, 0.5, 1], atol=1e-7)


def test_rescale_leaves_input_untouched():
    v = vol(np.arange(5.0))
    before = v.data.copy()
    linear_rescale(v)
    np.testing.assert_array_equal(v.data, before)


def test_rescale_degenerate_range():
    with pytest.raises(ValueError, match="degenerate intensity range"):
        linear_rescale(vol(np.full(4, 3.0)))


@given(hnp.arrays(np.float32, 12, elements=finite))
def test_rescale_is_monotone(values):
    if values.max() == values.min():
        return
    out = linear_rescale(vol(values)).data.ravel()
    order = np.argsort(values, kind="stable")
    assert np.all(np.diff(out[order]) >= 0)


# znorm_nonzero

def test_znorm_two_points():
    out = znorm_nonzero(vol(np.array([0, 1, 0, 3], np.float32))).data.ravel()
    np.testing.assert_allclose(out, [0, -1, 0, 1], atol=1e-7)


def test_znorm_three_points_oracle():
    out = znorm_nonzero(vol(np.array([2, 4, 6], np.float32))).data.ravel()
    expected = (np.array([2, 4, 6]) - 4) / np.sqrt(8 / 3)
    np.testing.assert_allclose(out, expected, atol=1e-6)
    np.testing.assert_allclose(out, [-1.2247, 0, 1.2247], atol=1e-4)


def test_znorm_is_idempotent_on_standardized_input():
    once = znorm_nonzero(vol(np.array([0, 2, 4, 6, 9], np.float32)))
    twice = znorm_nonzero(once)
    np.testing.assert_allclose(twice.data, once.data, atol=1e-6)


def test_znorm_zero_variance():
    with pytest.raises(ValueError):
        znorm_nonzero(vol(np.array([0, 2, 2], np.float32)))


@given(hnp.arrays(np.float64, 20, elements=st.floats(-50, 50, allow_nan=False)),
       hnp.arrays(np.bool_, 20))
def test_znorm_property(values, zero_mask):
    values = np.where(zero_mask, 0.0, values).astype(np.float32)
    nz = values[values != 0]
    if len(np.unique(nz)) < 2:
        return
    out = znorm_nonzero(vol(values)).data.ravel().astype(np.float64)
    mask = values != 0
    assert abs(out[mask].mean()) < 1e-6
    assert abs(out[mask].std() - 1) < 1e-6
    assert np.all(out[~mask] == 0)


# slicing

def _study_with_counts(counts, hw=(60, 60)):
    data = np.zeros((len(counts),) + hw, np.float32)
    for d, c in enumerate(counts):
        data[d].flat[:c] = 1.0
    return MultiModalStudy({Modality.T1: Volume(data), Modality.T2: Volume(data * 2)})


def test_slice_threshold_boundary():
    study = _study_with_counts([1999, 2000, 3600])
    kept = [row[Modality.T1].index for row in extract_axial_slices(study, 2000)]
    assert kept == [1, 2]


def test_slices_aligned_across_modalities():
    study = _study_with_counts([2000, 2500])
    for row in extract_axial_slices(study, 2000):
        assert row[Modality.T1].index == row[Modality.T2].index
        assert row[Modality.T1].brain_pixel_count == np.count_nonzero(row[Modality.T1].data)


def test_all_zero_volume_yields_no_slices():
    study = MultiModalStudy({Modality.T1: Volume(np.zeros((4, 8, 8)))})
    assert extract_axial_slices(study, 1) == []


def test_threshold_scales_with_resolution():
    assert scaled_min_brain_pixels(240, 240) == 2000
    assert scaled_min_brain_pixels(64, 64) == 142


def test_stack_shape_and_errors():
    out = stack_slices([np.full((4, 4), i, np.float32) for i in range(3)])
    assert out.shape == (3, 4, 4)
    np.testing.assert_array_equal(out.data[2], 2)
    with pytest.raises(ValueError):
        stack_slices([])
    with pytest.raises(ValueError):
        stack_slices([np.zeros((4, 4)), np.zeros((4, 5))])


@given(hnp.arrays(np.float32, (3, 4, 5), elements=finite))
def test_extract_then_stack_is_identity(data):
    study = MultiModalStudy({Modality.FLAIR: Volume(data, modality=Modality.FLAIR)})
    rows = extract_axial_slices(study, 0)
    out = stack_slices([r[Modality.FLAIR] for r in rows])
    np.testing.assert_array_equal(out.data, data)


# patching

def test_crop_bounds_and_alignment(toy_study):
    patches = random_crop_patch(toy_study, 32, rng_seed=3)
    origin = patches[Modality.T1].origin
    assert all(0 <= o <= 32 for o in origin)
    for key, p in patches.items():
        assert p.data.shape == (32, 32, 32)
        assert p.origin == origin
    sl = tuple(slice(o, o + 32) for o in origin)
    np.testing.assert_array_equal(patches["labels"].data, toy_study.labels.data[sl])
    np.testing.assert_array_equal(patches[Modality.T2].data, toy_study.volumes[Modality.T2].data[sl])


def test_crop_is_reproducible(toy_study):
    a = random_crop_patch(toy_study, 16, rng_seed=42)
    b = random_crop_patch(toy_study, 16, rng_seed=42)
    assert a[Modality.T1].origin == b[Modality.T1].origin


def test_full_size_crop_is_the_volume(small_study):
    patches = random_crop_patch(small_study, 32, rng_seed=0)
    assert patches[Modality.T1].origin == (0, 0, 0)
    np.testing.assert_array_equal(patches[Modality.T1].data, small_study.volumes[Modality.T1].data)


def test_crop_rejects_non_positive_size(small_study):
    with pytest.raises(ValueError):
        random_crop_patch(small_study, 0, rng_seed=0)


def test_small_volumes_are_padded_symmetrically():
    padded, lead = pad_to_size(np.ones((3, 4, 4)), 8)
    assert padded.shape == (8, 8, 8)
    assert lead == (2, 2, 2)
    assert padded[2:5, 2:6, 2:6].sum() == 48


def test_pad_to_multiple_round_trip():
    x = np.arange(5 * 6 * 7, dtype=np.float32).reshape(5, 6, 7)
    padded, crop = pad_to_multiple(x, 4)
    assert padded.shape == (8, 8, 8)
    np.testing.assert_array_equal(padded[crop], x)


# regions

def test_region_examples():
    labels = LabelMap(np.array([0, 1, 2, 3]).reshape(1, 1, 4))
    r = compose_regions(labels)
    assert r["WT"].ravel().tolist() == [False, True, True, True]
    assert r["TC"].ravel().tolist() == [False, True, False, True]
    assert r["ET"].ravel().tolist() == [False, False, False, True]
    empty = compose_regions(np.zeros((2, 2, 2), int))
    assert not any(m.any() for m in empty.values())


def test_region_unknown_label():
    with pytest.raises(ValueError):
        compose_regions(np.array([[[5]]]))


@given(hnp.arrays(np.int64, (4, 4, 4), elements=st.integers(0, 3)))
def test_regions_are_nested(labels):
    r = compose_regions(labels)
    assert np.all(r["ET"] <= r["TC"])
    assert np.all(r["TC"] <= r["WT"])

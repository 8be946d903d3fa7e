import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from brasyn.losses import masked_ssim_loss, region_targets, soft_dice_loss, ssim_loss, ssim_map_torch


def onehot_probs(labels):
    return torch.nn.functional.one_hot(labels, 4).movedim(-1, 1).double()


def test_ssim_loss_zero_for_identical():
    x = torch.randn(2, 1, 16, 16)
    assert ssim_loss(x, x).item() == pytest.approx(0.0, abs=1e-6)
    with pytest.raises(ValueError):
        ssim_map_torch(x, x[:, :, :8])


def test_per_sample_data_range():
    x, y = torch.randn(2, 2, 1, 12, 12).unbind(0)
    joint = ssim_map_torch(x, y, 7, torch.tensor([1.0, 3.0]))
    np.testing.assert_allclose(joint[1:], ssim_map_torch(x[1:], y[1:], 7, 3.0), atol=1e-6)


def test_masked_ssim_empty_mask_contributes_zero():
    x, y = torch.randn(2, 1, 1, 12, 12).unbind(0)
    assert masked_ssim_loss(x, y, torch.zeros_like(x)).item() == 0.0
    full = masked_ssim_loss(x, y, torch.ones_like(x))
    assert full.item() == pytest.approx(ssim_loss(x, y).item(), abs=1e-6)


def test_soft_dice_zero_for_perfect_prediction():
    labels = torch.randint(0, 4, (2, 6, 6, 6))
    assert soft_dice_loss(onehot_probs(labels), labels).item() == pytest.approx(0.0, abs=1e-9)


@given(st.integers(0, 2**31 - 1))
def test_soft_dice_in_unit_interval(seed):
    g = torch.Generator().manual_seed(seed)
    labels = torch.randint(0, 4, (2, 4, 4, 4), generator=g)
    probs = torch.softmax(torch.randn(2, 4, 4, 4, 4, generator=g, dtype=torch.float64), dim=1)
    loss = soft_dice_loss(probs, labels).item()
    assert 0.0 <= loss <= 1.0


def test_region_targets_are_nested():
    labels = torch.tensor([0, 1, 2, 3]).view(1, 1, 1, 4)
    wt, tc, et = region_targets(labels)[0].view(3, 4).tolist()
    assert wt == [False, True, True, True]
    assert tc == [False, True, False, True]
    assert et == [False, False, False, True]

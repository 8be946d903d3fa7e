import numpy as np
import pytest
import torch

from brasyn.checkpoint import load_checkpoint, parameter_checksum, save_checkpoint


def test_round_trip_and_kind_check(tmp_path):
    torch.manual_seed(0)
    model = torch.nn.Linear(3, 2)
    rng = np.random.default_rng(4)
    rng.random()
    path = save_checkpoint(tmp_path / "m.pt", "demo", {"width": 3}, model, epoch=7, rng=rng, frozen=True, extra=1)
    payload = load_checkpoint(path, "demo")
    assert payload["epoch"] == 7 and payload["frozen"] and payload["extra"] == 1
    assert payload["config"] == {"width": 3}
    restored = np.random.default_rng()
    restored.bit_generator.state = payload["numpy_rng"]
    assert restored.random() == rng.random()
    clone = torch.nn.Linear(3, 2)
    clone.load_state_dict(payload["state_dict"])
    assert parameter_checksum(clone) == parameter_checksum(model)
    with pytest.raises(ValueError):
        load_checkpoint(path, "other")
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.pt")


def test_checksum_detects_changes():
    model = torch.nn.Linear(2, 2)
    before = parameter_checksum(model)
    with torch.no_grad():
        model.bias.add_(1e-6)
    assert parameter_checksum(model) != before

"""
Unit tests for checkpoint module.
"""
import pytest
import sys
import json
from pathlib import Path

import numpy as np

# Add project root to path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

from attend_affect.core.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from attend_affect.core.gradcheck import toy_config, toy_windows
from attend_affect.core.models import ModelKind, build_model
from attend_affect.errors import DataValidationError, DimensionError


class TestCheckpoint:
    """Test saving and reloading model parameters."""

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_bit_exact_reload(self, kind, tmp_path):
        """Test a reloaded model has identical parameters and predictions."""
        config = toy_config(kind, "VAL", seed=2)
        model = build_model(config)
        path = save_checkpoint(model, tmp_path / "m.npz", history={"best_epoch": 3}, extra={"note": "x"})
        loaded, meta = load_checkpoint(path)
        original, restored = model.state_dict(), loaded.state_dict()
        assert list(original) == list(restored)
        assert all(np.array_equal(original[k], restored[k]) for k in original)
        windows = toy_windows(config, seed=1)
        assert np.array_equal(model.forward(windows, 4).data, loaded.forward(windows, 4).data)
        assert meta["history"] == {"best_epoch": 3}
        assert meta["extra"] == {"note": "x"}
        assert loaded.training is False

    def test_config_preserved(self, tmp_path):
        """Test the stored config rebuilds the same architecture."""
        config = toy_config("B2_TRANS", "AL", seed=5)
        config.positional = "none"
        path = save_checkpoint(build_model(config), tmp_path / "sub" / "m.npz")
        loaded, _ = load_checkpoint(path)
        assert loaded.config == config

    def test_missing_file(self, tmp_path):
        """Test a missing checkpoint raises."""
        with pytest.raises(DataValidationError):
            load_checkpoint(tmp_path / "absent.npz")

    def test_not_an_archive(self, tmp_path):
        """Test a non-npz file is rejected."""
        path = tmp_path / "junk.npz"
        path.write_text("not a checkpoint")
        with pytest.raises(DataValidationError):
            read_checkpoint(path)

    def test_wrong_format_version(self, tmp_path):
        """Test an unknown format number is rejected."""
        model = build_model(toy_config("B1_LSTM", "V"))
        arrays = {"param:" + k: v for k, v in model.state_dict().items()}
        arrays["__meta__"] = np.array(json.dumps({"format": 99, "config": model.config.to_dict()}))
        path = tmp_path / "future.npz"
        np.savez(path, **arrays)
        with pytest.raises(DataValidationError, match="format"):
            read_checkpoint(path)

    def test_shape_mismatch(self, tmp_path):
        """Test a stored tensor of the wrong shape is a dimension error."""
        model = build_model(toy_config("B1_LSTM", "V"))
        arrays = {"param:" + k: v for k, v in model.state_dict().items()}
        arrays["param:decoder.bias"] = np.zeros(3)
        arrays["__meta__"] = np.array(json.dumps({"format": 1, "config": model.config.to_dict()}))
        path = tmp_path / "bad.npz"
        np.savez(path, **arrays)
        with pytest.raises(DimensionError):
            load_checkpoint(path)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

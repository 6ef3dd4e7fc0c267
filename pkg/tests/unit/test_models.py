"""
Unit tests for models module.
"""
import pytest
import sys
from pathlib import Path

import numpy as np

# Add project root to path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

from attend_affect.core.dataset import NarrativeClip
from attend_affect.core.gradcheck import TOY_FEATURE_DIMS, legal_subsets, toy_config, toy_windows
from attend_affect.core.metrics import RatingSeries
from attend_affect.core.models import (
    ModelConfig, ModelKind, build_model, fuse_simple, predict_clip, prepare_clip,
)
from attend_affect.core.tensor_core import Tensor
from attend_affect.core.windowing import Modality, ModalityStream
from attend_affect.errors import ConfigurationError, DataValidationError


def make_clip(duration=10.0, modalities="VAL", clip_id="c0"):
    """Sparse streams so no window exceeds the toy n_max of 3."""
    rng = np.random.default_rng(0)
    periods = {"V": 0.5, "A": 1.0, "L": 2.0}
    streams = {}
    for m in modalities:
        times = np.arange(0.0, duration, periods[m])
        streams[Modality(m)] = ModalityStream(m, times, rng.normal(size=(len(times), TOY_FEATURE_DIMS[m])))
    return NarrativeClip(clip_id, "t0", duration, streams, [RatingSeries(np.zeros(int(duration / 0.5)))] * 2)


class TestModelConfig:
    """Test configuration validation and dimension repair."""

    def test_kind_aliases(self):
        """Test B1/B2/B3 aliases and case folding."""
        assert ModelKind.parse("b1") == ModelKind.B1_LSTM
        assert ModelKind.parse("B3") == ModelKind.B3_MFN
        assert ModelKind.parse("sft") == ModelKind.SFT
        with pytest.raises(ConfigurationError):
            ModelKind.parse("B4")

    def test_d_model_rounds_to_heads(self):
        """Test 256 + 256 + 300 = 812 is repaired to 816 for h = 8."""
        config = ModelConfig(kind="SFT", modalities="VAL", embed_dims={"V": 256, "A": 256, "L": 300})
        assert config.resolved_d_model() == 816

    def test_encoder_dim_rounds_up(self):
        """Test a 300-dim linguistic embedding gets a 304-dim encoder for h = 8."""
        config = ModelConfig(kind="MFT", modalities="VAL", embed_dims={"V": 256, "A": 256, "L": 300})
        assert config.resolved_encoder_dim(Modality.LINGUISTIC) == 304
        assert config.resolved_encoder_dim(Modality.VISUAL) == 256

    def test_explicit_d_model_must_divide(self):
        """Test an explicit d_model not divisible by h is rejected."""
        with pytest.raises(ConfigurationError):
            ModelConfig(kind="SFT", d_model=100, n_heads=8)

    @pytest.mark.parametrize("kind", ["MFT", "B3_MFN"])
    def test_fusion_needs_two_modalities(self, kind):
        """Test memory fusion with one modality is a configuration error."""
        with pytest.raises(ConfigurationError):
            ModelConfig(kind=kind, modalities="V")

    def test_modalities_normalized(self):
        """Test modality strings are stored in V, A, L order."""
        assert ModelConfig(kind="SFT", modalities="lv").modalities == "VL"

    def test_dict_round_trip(self):
        """Test to_dict/from_dict and rejection of unknown keys."""
        config = toy_config("MFT", "AL", seed=4)
        assert ModelConfig.from_dict(config.to_dict()) == config
        with pytest.raises(ConfigurationError):
            ModelConfig.from_dict({"kind": "SFT", "layers": 3})


class TestBuildModel:
    """Test architecture construction."""

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_every_legal_subset_builds(self, kind):
        """Test all 7 subsets (4 for memory fusion) build and predict."""
        subsets = legal_subsets(kind)
        assert len(subsets) == (4 if kind in (ModelKind.MFT, ModelKind.B3_MFN) else 7)
        for modalities in subsets:
            config = toy_config(kind, modalities)
            out = build_model(config).forward(toy_windows(config), 4)
            assert out.shape == (4,), f"{kind.value}({modalities}) returned {out.shape}"

    def test_same_seed_same_parameters(self):
        """Test identical configs give bit-identical parameters."""
        first = build_model(toy_config("SFT", "VAL", seed=5)).state_dict()
        second = build_model(toy_config("SFT", "VAL", seed=5)).state_dict()
        assert list(first) == list(second)
        assert all(np.array_equal(first[k], second[k]) for k in first)

    def test_different_seed_different_parameters(self):
        """Test a different seed changes the initialization."""
        first = build_model(toy_config("B1_LSTM", "VA", seed=0)).state_dict()
        second = build_model(toy_config("B1_LSTM", "VA", seed=1)).state_dict()
        assert not all(np.array_equal(first[k], second[k]) for k in first)

    def test_sft_parameter_count(self):
        """Test SFT(VAL) has exactly the parameters its shapes imply."""
        d, k, d_model, ffn, hidden = 4, 2, 12, 24, 4
        embed = sum(d * f * k + d + 2 * (d * d + d) for f in TOY_FEATURE_DIMS.values())
        fusion = d_model * 3 * d + d_model
        block = 3 * d_model * d_model + d_model * d_model + (ffn * d_model + ffn) + (d_model * ffn + d_model) \
            + 4 * d_model
        lstm = 4 * hidden * (d_model + hidden) + 4 * hidden
        decoder = hidden + 1
        model = build_model(toy_config("SFT", "VAL"))
        assert model.d_model == d_model
        assert model.parameter_count() == embed + fusion + 2 * block + lstm + decoder

    def test_b2_without_positions_is_permutation_equivariant(self):
        """Test permuting input windows permutes B2 predictions."""
        config = toy_config("B2_TRANS", "VA")
        config.positional = "none"
        model = build_model(config)
        windows = toy_windows(config, count=5, seed=1)
        perm = np.random.default_rng(2).permutation(5)
        out = model.forward(windows, 5).data
        permuted = model.forward({m: w[perm] for m, w in windows.items()}, 5).data
        assert np.max(np.abs(permuted - out[perm])) < 1e-9

    @pytest.mark.parametrize("kind", ["SFT", "B1_LSTM"])
    def test_recurrent_decoder_is_order_sensitive(self, kind):
        """Test the LSTM decoder breaks permutation equivariance."""
        config = toy_config(kind, "VA")
        config.positional = "none"
        model = build_model(config)
        windows = toy_windows(config, count=5, seed=1)
        perm = np.array([4, 3, 2, 1, 0])
        out = model.forward(windows, 5).data
        permuted = model.forward({m: w[perm] for m, w in windows.items()}, 5).data
        assert np.max(np.abs(permuted - out[perm])) > 1e-9

    def test_fuse_simple_range(self):
        """Test fused windows lie in (-1, 1) and zero weights give zeros."""
        model = build_model(toy_config("SFT", "VA"))
        rng = np.random.default_rng(3)
        embeddings = {Modality.VISUAL: Tensor(rng.normal(scale=5.0, size=(6, 4))),
                      Modality.ACOUSTIC: Tensor(rng.normal(scale=5.0, size=(6, 4)))}
        fused = fuse_simple(embeddings, model).data
        assert fused.shape == (6, model.d_model)
        assert np.all(np.abs(fused) <= 1.0)
        model.w_fuse.data[...] = 0.0
        assert np.array_equal(fuse_simple(embeddings, model).data, np.zeros((6, model.d_model)))

    def test_fuse_simple_missing_embedding(self):
        """Test a configured modality without an embedding raises."""
        model = build_model(toy_config("SFT", "VA"))
        with pytest.raises(DataValidationError):
            fuse_simple({Modality.VISUAL: Tensor(np.zeros((2, 4)))}, model)


class TestPredictClip:
    """Test clip-level prediction."""

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_ten_second_clip(self, kind):
        """Test a 10 s clip gives 10 predictions at 1 s."""
        model = build_model(toy_config(kind, "VAL"))
        prediction = predict_clip(model, make_clip(10.0))
        assert len(prediction) == 10
        assert prediction.period == 1.0

    def test_partial_window_dropped(self):
        """Test a 10.7 s clip still gives 10 predictions."""
        model = build_model(toy_config("B1_LSTM", "A"))
        assert len(predict_clip(model, make_clip(10.7, modalities="A"))) == 10

    def test_deterministic_and_mode_restored(self):
        """Test repeated predictions agree and the training flag survives."""
        model = build_model(toy_config("MFT", "VAL")).train_mode()
        clip = make_clip()
        first = predict_clip(model, clip)
        assert first == predict_clip(model, clip)
        assert model.training is True

    def test_missing_modality(self):
        """Test a clip without a configured stream raises."""
        model = build_model(toy_config("SFT", "VAL"))
        with pytest.raises(DataValidationError):
            predict_clip(model, make_clip(modalities="VA"))

    def test_linguistic_windows_are_coarse(self):
        """Test 10 s of language fills ceil(10 / 5) = 2 stacked windows."""
        config = toy_config("SFT", "VAL")
        windows, count = prepare_clip(make_clip(), config.window_plan(), config.modality_set)
        assert count == 10
        assert windows[Modality.LINGUISTIC].shape == (2, 3, 3)
        assert windows[Modality.VISUAL].shape == (10, 3, 3)

    def test_attention_collector(self):
        """Test fusion models record per-modality encoder heads and one DMAN vector per window."""
        model = build_model(toy_config("MFT", "AL"))
        attention = {}
        predict_clip(model, make_clip(), attention)
        assert set(attention) == {"encoder_A", "encoder_L", "memory"}
        assert len(attention["encoder_A"]) == 2 * 2
        assert len(attention["memory"]) == 10
        for vector in attention["memory"]:
            assert vector.sum() == pytest.approx(1.0)

    def test_empty_clip(self):
        """Test a clip shorter than one window predicts nothing."""
        model = build_model(toy_config("B2_TRANS", "V"))
        assert len(predict_clip(model, make_clip(0.6, modalities="V"))) == 0


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

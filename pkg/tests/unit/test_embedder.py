"""
Unit tests for embedder module.
"""
import pytest
import sys
from pathlib import Path

import numpy as np

# Add project root to path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

from attend_affect.core.embedder import EmbedderParams, embed_window, highway
from attend_affect.core.tensor_core import RngState, Tensor, finite_diff_check, linear, mean
from attend_affect.core.windowing import Modality
from attend_affect.errors import ConfigurationError, DimensionError


def make_params(input_dim=3, d_m=4, seed=0, gate="softmax"):
    return EmbedderParams(Modality.VISUAL, input_dim, d_m, RngState(seed), gate=gate)


class TestHighway:
    """Test the modified highway network."""

    def test_zero_gate_is_uniform(self):
        """Test W_gate = 0, b_gate = 0 gives g = 1/d_m."""
        params = make_params(d_m=4)
        params.w_gate.data[...] = 0.0
        x = Tensor([1.0, -2.0, 0.5, 3.0])
        x_proj = linear(x, params.w_proj, params.b_proj).data
        expected = x_proj / 4 + (1 - 1 / 4) * x.data
        assert np.allclose(highway(x, params).data, expected, atol=1e-14)

    @pytest.mark.parametrize("gate", ["softmax", "sigmoid"])
    def test_identity_projection_returns_input(self, gate):
        """Test W_proj = I, b_proj = 0 returns x_conv for any gate."""
        params = make_params(d_m=5, gate=gate)
        params.w_proj.data[...] = np.eye(5)
        x = Tensor(np.random.default_rng(1).normal(size=5))
        assert np.allclose(highway(x, params).data, x.data, atol=1e-12)

    @pytest.mark.parametrize("gate", ["softmax", "sigmoid"])
    def test_output_is_convex_combination(self, gate):
        """Test every component lies between x_proj and x_conv on 1000 draws."""
        rng = np.random.default_rng(2)
        params = make_params(d_m=6, gate=gate)
        xs = Tensor(rng.normal(scale=3.0, size=(1000, 6)))
        out = highway(xs, params).data
        x_proj = linear(xs, params.w_proj, params.b_proj).data
        low, high = np.minimum(x_proj, xs.data), np.maximum(x_proj, xs.data)
        assert np.all(out >= low - 1e-12), "Highway output fell below both inputs"
        assert np.all(out <= high + 1e-12), "Highway output rose above both inputs"

    def test_wrong_width(self):
        """Test an input of the wrong width raises."""
        with pytest.raises(DimensionError):
            highway(Tensor(np.zeros(3)), make_params(d_m=4))

    def test_unknown_gate(self):
        """Test an unknown gate mode is rejected."""
        with pytest.raises(ConfigurationError):
            make_params(gate="relu")


class TestEmbedWindow:
    """Test conv -> pool -> highway."""

    def test_output_shapes(self):
        """Test single and batched windows come out with d_m features."""
        params = make_params(input_dim=3, d_m=4)
        assert embed_window(Tensor(np.ones((3, 5))), params).shape == (4,)
        assert embed_window(Tensor(np.ones((7, 3, 5))), params).shape == (7, 4)

    def test_eval_mode_deterministic(self):
        """Test two eval forwards are identical."""
        params = make_params()
        x = Tensor(np.random.default_rng(3).normal(size=(3, 4)))
        first = embed_window(x, params, RngState(0), training=False).data
        second = embed_window(x, params, RngState(9), training=False).data
        assert np.array_equal(first, second)

    def test_training_applies_dropout(self):
        """Test training mode changes the output for a fixed input."""
        params = make_params(input_dim=3, d_m=8)
        x = Tensor(np.random.default_rng(3).normal(size=(3, 4)))
        assert not np.array_equal(embed_window(x, params, RngState(0), training=True).data,
                                  embed_window(x, params).data)

    def test_hand_computed_case(self):
        """Test d=1, n_max=3 with hand-set weights."""
        params = EmbedderParams(Modality.ACOUSTIC, 1, 1, RngState(0))
        params.conv_kernels.data[...] = [[[1.0, 1.0]]]
        params.conv_bias.data[...] = [0.5]
        params.w_proj.data[...] = [[2.0]]
        params.b_proj.data[...] = [1.0]
        # conv of [1, 2, 3] -> [3.5, 5.5]; pool -> 5.5; proj -> 12; softmax over one feature -> 1
        out = embed_window(Tensor([[1.0, 2.0, 3.0]]), params).data
        assert np.allclose(out, [12.0])

    def test_window_shorter_than_kernel(self):
        """Test n_max < k raises."""
        with pytest.raises(DimensionError, match="too short"):
            embed_window(Tensor(np.ones((3, 1))), make_params())

    def test_gradients(self):
        """Test gradients through conv, pool and highway."""
        params = make_params(input_dim=3, d_m=4, seed=5)
        x = Tensor(np.random.default_rng(6).normal(size=(2, 3, 4)))
        target = np.random.default_rng(7).normal(size=(2, 4))
        loss = lambda: mean((embed_window(x, params) - target) ** 2)
        assert finite_diff_check(loss, params.parameters()) < 1e-4


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

"""
Unit tests for recurrent module.
"""
import pytest
import sys
from pathlib import Path

import numpy as np

# Add project root to path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

from attend_affect.core.recurrent import DecoderParams, LstmParams, decode_sequence, lstm_step
from attend_affect.core.tensor_core import RngState, Tensor, finite_diff_check, mean
from attend_affect.errors import ConfigurationError, DimensionError


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def reference_lstm(xs, weight, bias, hidden):
    h, c, hs = np.zeros(hidden), np.zeros(hidden), []
    for x in xs:
        z = weight @ np.concatenate([x, h]) + bias
        i, f, g, o = sigmoid(z[:hidden]), sigmoid(z[hidden:2 * hidden]), np.tanh(z[2 * hidden:3 * hidden]), \
            sigmoid(z[3 * hidden:])
        c = f * c + i * g
        h = o * np.tanh(c)
        hs.append(h)
    return np.array(hs)


def zeroed(params):
    for p in params.parameters():
        p.data[...] = 0.0
    return params


class TestLstmStep:
    """Test one LSTM update."""

    def test_zero_fixed_point(self):
        """Test zero params and state stay at zero."""
        lstm = zeroed(LstmParams(2, 3, RngState(0)))
        h, c = lstm_step(*lstm.initial_state(), Tensor(np.zeros(2)), lstm)
        assert np.array_equal(h.data, np.zeros(3))
        assert np.array_equal(c.data, np.zeros(3))

    def test_half_gates(self):
        """Test zero params with c=[2] give c'=1 and h'=0.5·tanh(1)."""
        lstm = zeroed(LstmParams(1, 1, RngState(0)))
        h, c = lstm_step(Tensor([0.0]), Tensor([2.0]), Tensor([0.0]), lstm)
        assert c.data[0] == pytest.approx(1.0)
        assert h.data[0] == pytest.approx(0.5 * np.tanh(1.0))
        assert h.data[0] == pytest.approx(0.3808, abs=1e-4)

    def test_hidden_bounded(self):
        """Test |h'| < 1 for random inputs."""
        lstm = LstmParams(4, 5, RngState(1))
        rng = np.random.default_rng(0)
        h, c = lstm.initial_state()
        for _ in range(20):
            h, c = lstm_step(h, c, Tensor(rng.normal(scale=3.0, size=4)), lstm)
            assert np.all(np.abs(h.data) < 1.0)

    def test_input_width_checked(self):
        """Test a wrong input width raises."""
        lstm = LstmParams(4, 2, RngState(0))
        with pytest.raises(DimensionError):
            lstm_step(*lstm.initial_state(), Tensor(np.zeros(3)), lstm)

    def test_hidden_dim_positive(self):
        """Test hidden dim 0 is rejected."""
        with pytest.raises(ConfigurationError):
            LstmParams(2, 0, RngState(0))


class TestDecodeSequence:
    """Test the LSTM decoder head."""

    def test_zero_params_give_bias(self):
        """Test zero LSTM and head weights give a constant b_decoder series."""
        lstm = zeroed(LstmParams(3, 4, RngState(0)))
        decoder = zeroed(DecoderParams(4, RngState(0)))
        decoder.bias.data[...] = 0.7
        out = decode_sequence(Tensor(np.random.default_rng(0).normal(size=(5, 3))), lstm, decoder)
        assert np.array_equal(out.data, [0.7] * 5)

    def test_length_and_empty(self):
        """Test output length equals input length, including zero."""
        lstm, decoder = LstmParams(3, 4, RngState(0)), DecoderParams(4, RngState(1))
        assert decode_sequence(Tensor(np.ones((6, 3))), lstm, decoder).shape == (6,)
        assert decode_sequence(Tensor(np.zeros((0, 3))), lstm, decoder).shape == (0,)

    def test_matches_unrolled_reference(self):
        """Test a 3-window sequence against a step-by-step numpy unroll."""
        lstm, decoder = LstmParams(2, 3, RngState(4)), DecoderParams(3, RngState(5))
        decoder.bias.data[...] = -0.2
        xs = np.random.default_rng(6).normal(size=(3, 2))
        hs = reference_lstm(xs, lstm.weight.data, lstm.bias.data, 3)
        expected = hs @ decoder.weight.data[0] + decoder.bias.data[0]
        assert np.allclose(decode_sequence(Tensor(xs), lstm, decoder).data, expected, atol=1e-14)

    def test_causal(self):
        """Test perturbing window t leaves earlier predictions unchanged."""
        lstm, decoder = LstmParams(2, 3, RngState(7)), DecoderParams(3, RngState(8))
        xs = np.random.default_rng(9).normal(size=(5, 2))
        base = decode_sequence(Tensor(xs), lstm, decoder).data
        xs[3] += 1.0
        moved = decode_sequence(Tensor(xs), lstm, decoder).data
        assert np.array_equal(base[:3], moved[:3])
        assert not np.array_equal(base[3:], moved[3:])

    def test_gradients(self):
        """Test LSTM and head gradients against central differences."""
        lstm, decoder = LstmParams(2, 3, RngState(10)), DecoderParams(3, RngState(11))
        xs = Tensor(np.random.default_rng(12).normal(size=(4, 2)))
        target = np.random.default_rng(13).normal(size=4)
        loss = lambda: mean((decode_sequence(xs, lstm, decoder) - target) ** 2)
        assert finite_diff_check(loss, lstm.parameters() + decoder.parameters()) < 1e-4


if __name__ == "__main__":
    pytest.main([__file__, "-v"])

from typing import List, Tuple

import numpy as np

from attend_affect.core.params import ParamSet
from attend_affect.core.tensor_core import (
    RngState, Tensor, as_tensor, concat, linear, reshape, sigmoid, stack, tanh,
)
from attend_affect.errors import ConfigurationError, DimensionError


class LstmParams(ParamSet):
    """
    Single-layer LSTM cell.

    The four gates share one stacked weight over [x, h]: rows 0:H input gate,
    H:2H forget gate, 2H:3H candidate, 3H:4H output gate.
    """

    def __init__(self, input_dim: int, hidden_dim: int, rng: RngState):
        super().__init__()
        if hidden_dim < 1:
            raise ConfigurationError(f"LSTM hidden dim must be >= 1, got {hidden_dim}")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.weight = self.add_weight("weight", rng, (4 * hidden_dim, input_dim + hidden_dim), input_dim + hidden_dim)
        self.bias = self.add_bias("bias", 4 * hidden_dim)

    def initial_state(self) -> Tuple[Tensor, Tensor]:
        return Tensor(np.zeros(self.hidden_dim)), Tensor(np.zeros(self.hidden_dim))


class DecoderParams(ParamSet):
    """Linear head W_decoder (1 x hidden) and scalar b_decoder."""

    def __init__(self, hidden_dim: int, rng: RngState):
        super().__init__()
        self.weight = self.add_weight("weight", rng, (1, hidden_dim), hidden_dim)
        self.bias = self.add_bias("bias", 1)


def lstm_step(h: Tensor, c: Tensor, x: Tensor, params: LstmParams) -> Tuple[Tensor, Tensor]:
    """
    One LSTM update.

    i, f, o = sigmoid gates; g = tanh candidate
    c' = f ⊙ c + i ⊙ g
    h' = o ⊙ tanh(c')

    Example:
        zero weights and biases, c=[2] -> c'=[1], h'=[0.5·tanh(1)] ≈ [0.3808]
    """
    x = as_tensor(x)
    if x.shape[-1] != params.input_dim:
        raise DimensionError(f"LSTM expects input dim {params.input_dim}, got shape {x.shape}")
    hidden = params.hidden_dim
    z = linear(concat([x, h], axis=-1), params.weight, params.bias)
    i = sigmoid(z[0:hidden])
    f = sigmoid(z[hidden:2 * hidden])
    g = tanh(z[2 * hidden:3 * hidden])
    o = sigmoid(z[3 * hidden:])
    c_next = f * c + i * g
    return o * tanh(c_next), c_next


def lstm_sequence(xs: Tensor, params: LstmParams) -> Tuple[List[Tensor], List[Tensor]]:
    """Run the cell over (n, input_dim) from a zero state; returns hidden and cell states."""
    h, c = params.initial_state()
    hs, cs = [], []
    for t in range(xs.shape[0]):
        h, c = lstm_step(h, c, xs[t], params)
        hs.append(h)
        cs.append(c)
    return hs, cs


def decode_sequence(xs: Tensor, lstm: LstmParams, decoder: DecoderParams) -> Tensor:
    """
    LSTM over the encoder outputs, then r̂_t = W_decoder·h_t + b_decoder.

    Args:
        xs: (n, d) window sequence
        lstm: LstmParams with input dim d
        decoder: DecoderParams

    Returns:
        Tensor: (n,) raw (unclamped) predictions; empty for n = 0
    """
    xs = as_tensor(xs)
    if xs.shape[0] == 0:
        return Tensor(np.zeros(0))
    hs, _ = lstm_sequence(xs, lstm)
    out = linear(stack(hs, axis=0), decoder.weight, decoder.bias)
    return reshape(out, (xs.shape[0],))

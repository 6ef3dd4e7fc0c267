import logging
from typing import List, Optional

import numpy as np

from attend_affect.config import (
    CAUSAL_ATTENTION, FFN_MULTIPLIER, N_BLOCKS, N_HEADS, POSITIONAL_MODE, TRANSFORMER_DROPOUT,
)
from attend_affect.core.params import ParamSet
from attend_affect.core.tensor_core import (
    RngState, Tensor, as_tensor, concat, dropout, layer_norm, linear, matmul, relu, softmax, transpose,
)
from attend_affect.errors import ConfigurationError, DimensionError

log = logging.getLogger(__name__)

POSITIONAL_MODES = ("sinusoidal", "none")


class EncoderBlockParams(ParamSet):
    """One block: h attention heads, W^O, the FFN and two layer norms."""

    def __init__(self, d_model: int, n_heads: int, ffn_dim: int, rng: RngState):
        super().__init__()
        d_k = d_model // n_heads
        self.w_q: List[Tensor] = []
        self.w_k: List[Tensor] = []
        self.w_v: List[Tensor] = []
        for i in range(n_heads):
            self.w_q.append(self.add_weight(f"w_q.{i}", rng, (d_k, d_model), d_model))
            self.w_k.append(self.add_weight(f"w_k.{i}", rng, (d_k, d_model), d_model))
            self.w_v.append(self.add_weight(f"w_v.{i}", rng, (d_k, d_model), d_model))
        self.w_o = self.add_weight("w_o", rng, (d_model, d_model), d_model)
        self.w_1 = self.add_weight("w_1", rng, (ffn_dim, d_model), d_model)
        self.b_1 = self.add_bias("b_1", ffn_dim)
        self.w_2 = self.add_weight("w_2", rng, (d_model, ffn_dim), ffn_dim)
        self.b_2 = self.add_bias("b_2", d_model)
        self.ln1_gain = self.add_constant("ln1_gain", 1.0, d_model)
        self.ln1_bias = self.add_bias("ln1_bias", d_model)
        self.ln2_gain = self.add_constant("ln2_gain", 1.0, d_model)
        self.ln2_bias = self.add_bias("ln2_bias", d_model)


class TransformerParams(ParamSet):
    """
    Self-attention encoder of n_blocks post-norm blocks with h heads each.

    Raises:
        ConfigurationError: d_model not divisible by n_heads, unknown positional mode
    """

    def __init__(self, d_model: int, rng: RngState, n_heads: int = N_HEADS, n_blocks: int = N_BLOCKS,
                 ffn_dim: Optional[int] = None, p_dropout: float = TRANSFORMER_DROPOUT,
                 positional: str = POSITIONAL_MODE, causal: bool = CAUSAL_ATTENTION):
        super().__init__()
        if n_heads < 1 or d_model % n_heads != 0:
            raise ConfigurationError(f"d_model={d_model} is not divisible by h={n_heads}")
        if positional not in POSITIONAL_MODES:
            raise ConfigurationError(f"positional mode must be one of {POSITIONAL_MODES}, got {positional!r}")
        if positional == "sinusoidal" and d_model % 2:
            raise ConfigurationError(f"sinusoidal positions need an even d_model, got {d_model}")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_k = d_model // n_heads
        self.ffn_dim = ffn_dim or FFN_MULTIPLIER * d_model
        self.p_dropout = p_dropout
        self.positional = positional
        self.causal = causal
        self.blocks = [self.add_child(f"blocks.{b}", EncoderBlockParams(d_model, n_heads, self.ffn_dim, rng))
                       for b in range(n_blocks)]


def positional_encoding(n: int, d_model: int) -> np.ndarray:
    """
    Sinusoid table: PE[t, 2i] = sin(t / 10000^(2i/d)), PE[t, 2i+1] = cos(·).

    Raises:
        ConfigurationError: odd d_model
    """
    if d_model % 2:
        raise ConfigurationError(f"positional encoding needs an even d_model, got {d_model}")
    positions = np.arange(n, dtype=np.float64)[:, None]
    rates = 10000.0 ** (np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    table = np.zeros((n, d_model))
    table[:, 0::2] = np.sin(positions / rates)
    table[:, 1::2] = np.cos(positions / rates)
    return table


def attention_weights(x: Tensor, w_q: Tensor, w_k: Tensor, causal: bool = False) -> Tensor:
    """Row-stochastic n x n matrix Softmax(Q·Kᵀ / sqrt(d_k))."""
    q = linear(x, w_q)
    k = linear(x, w_k)
    scores = matmul(q, transpose(k)) / float(np.sqrt(w_q.shape[0]))
    if causal:
        n = x.shape[0]
        scores = scores + np.triu(np.full((n, n), -1e30), k=1)
    return softmax(scores, axis=-1)


def attention_single_head(x: Tensor, w_q: Tensor, w_k: Tensor, w_v: Tensor,
                          causal: bool = False, trace: Optional[list] = None) -> Tensor:
    """
    Scaled dot-product self-attention for one head.

    Args:
        x: (n, d_model) window sequence
        w_q, w_k, w_v: (d_k, d_model) projections
        causal: mask future windows
        trace: collects the attention matrix as an ndarray

    Returns:
        Tensor: (n, d_k), each row a convex combination of the value rows
    """
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[0] < 1:
        raise DimensionError(f"attention needs a non-empty (n, d_model) sequence, got shape {x.shape}")
    weights = attention_weights(x, w_q, w_k, causal)
    if trace is not None:
        trace.append(weights.data.copy())
    return matmul(weights, linear(x, w_v))


def multi_head(x: Tensor, block: EncoderBlockParams, causal: bool = False,
               trace: Optional[list] = None) -> Tensor:
    """Concat(Head_1, ..., Head_h) · W^O, shape (n, d_model)."""
    heads = [attention_single_head(x, wq, wk, wv, causal, trace)
             for wq, wk, wv in zip(block.w_q, block.w_k, block.w_v)]
    return linear(concat(heads, axis=-1), block.w_o)


def feed_forward(x: Tensor, block: EncoderBlockParams) -> Tensor:
    """f_T(x) = max(0, x·W1 + b1)·W2 + b2 applied to every window."""
    return linear(relu(linear(x, block.w_1, block.b_1)), block.w_2, block.b_2)


def encode(x: Tensor, params: TransformerParams, rng: Optional[RngState] = None,
           training: bool = False, trace: Optional[list] = None) -> Tensor:
    """
    Run the window sequence through the stacked encoder blocks.

    Each block: multi-head attention -> add & layer norm -> dropout -> FFN ->
    dropout -> add & layer norm. Dropout also sits between blocks (not after
    the last one). Sinusoidal positions are added before the first block
    unless the positional mode is "none".

    Args:
        x: (n, d_model)
        params: TransformerParams
        rng: dropout stream
        training: dropout on/off
        trace: collects every head's attention matrix, block by block

    Returns:
        Tensor: (n, d_model)
    """
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != params.d_model:
        raise DimensionError(f"encoder expects (n, {params.d_model}), got shape {x.shape}")
    if params.positional == "sinusoidal":
        x = x + positional_encoding(x.shape[0], params.d_model)
    for b, block in enumerate(params.blocks):
        if b > 0:
            x = dropout(x, params.p_dropout, rng, training)
        x = layer_norm(x + multi_head(x, block, params.causal, trace), block.ln1_gain, block.ln1_bias)
        ffn = dropout(feed_forward(dropout(x, params.p_dropout, rng, training), block),
                      params.p_dropout, rng, training)
        x = layer_norm(x + ffn, block.ln2_gain, block.ln2_bias)
    return x

from typing import Optional

from attend_affect.config import CNN_DROPOUT, GATE_MODE, KERNEL_SIZE
from attend_affect.core.params import ParamSet
from attend_affect.core.tensor_core import (
    RngState, Tensor, as_tensor, conv1d, dropout, linear, maxpool_time, sigmoid, softmax,
)
from attend_affect.core.windowing import Modality
from attend_affect.errors import ConfigurationError, DimensionError

GATE_MODES = ("softmax", "sigmoid")


class EmbedderParams(ParamSet):
    """
    Conv1D + highway parameters for one modality.

    conv kernels are d_m x |v_m| x k; W_proj and W_gate are d_m x d_m.
    """

    def __init__(self, modality: Modality, input_dim: int, d_m: int, rng: RngState,
                 kernel_size: int = KERNEL_SIZE, gate: str = GATE_MODE, p_dropout: float = CNN_DROPOUT):
        super().__init__()
        if gate not in GATE_MODES:
            raise ConfigurationError(f"gate must be one of {GATE_MODES}, got {gate!r}")
        self.modality = Modality.parse(modality)
        self.input_dim = input_dim
        self.d_m = d_m
        self.kernel_size = kernel_size
        self.gate = gate
        self.p_dropout = p_dropout
        self.conv_kernels = self.add_weight("conv_kernels", rng, (d_m, input_dim, kernel_size), input_dim * kernel_size)
        self.conv_bias = self.add_bias("conv_bias", d_m)
        self.w_proj = self.add_weight("w_proj", rng, (d_m, d_m), d_m)
        self.b_proj = self.add_bias("b_proj", d_m)
        self.w_gate = self.add_weight("w_gate", rng, (d_m, d_m), d_m)
        self.b_gate = self.add_bias("b_gate", d_m)


def highway(x_conv: Tensor, params: EmbedderParams) -> Tensor:
    """
    Modified highway network without the ReLU on the projection.

    x_proj = W_proj·x + b_proj
    g      = Softmax(W_gate·x + b_gate) over the d_m features (or sigmoid)
    out    = g ⊙ x_proj + (1 − g) ⊙ x

    Works on (..., d_m) so a whole clip of windows goes through at once.
    """
    x_conv = as_tensor(x_conv)
    if x_conv.shape[-1] != params.d_m:
        raise DimensionError(f"highway expects {params.d_m} features, got shape {x_conv.shape}")
    x_proj = linear(x_conv, params.w_proj, params.b_proj)
    scores = linear(x_conv, params.w_gate, params.b_gate)
    gate = softmax(scores, axis=-1) if params.gate == "softmax" else sigmoid(scores)
    return gate * x_proj + (1.0 - gate) * x_conv


def embed_window(windows: Tensor, params: EmbedderParams,
                 rng: Optional[RngState] = None, training: bool = False) -> Tensor:
    """
    Embed stacked windows: conv1d -> dropout -> max-pool over time -> highway.

    Args:
        windows: (|v_m|, n_max) or a batch (n_windows, |v_m|, n_max)
        params: EmbedderParams of the modality
        rng: dropout stream (training only)
        training: apply dropout p=0.3 to the conv output

    Returns:
        Tensor: (d_m,) or (n_windows, d_m)

    Raises:
        DimensionError: n_max < kernel size
    """
    windows = as_tensor(windows)
    if windows.shape[-1] < params.kernel_size:
        raise DimensionError(
            f"window too short: n_max={windows.shape[-1]} < kernel size {params.kernel_size}")
    conv = conv1d(windows, params.conv_kernels, params.conv_bias)
    conv = dropout(conv, params.p_dropout, rng, training)
    return highway(maxpool_time(conv), params)

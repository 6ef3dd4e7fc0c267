import logging
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from attend_affect.config import (
    DMAN_DROPOUT, MEMORY_DIM, MFN_MODALITY_ORDER, MFN_NET_HIDDEN, OUTPUT_DROPOUT,
)
from attend_affect.core.params import ParamSet
from attend_affect.core.recurrent import LstmParams, lstm_step
from attend_affect.core.tensor_core import (
    RngState, Tensor, concat, dropout, linear, relu, reshape, sigmoid, softmax, stack, tanh,
)
from attend_affect.core.windowing import Modality
from attend_affect.errors import ConfigurationError, DimensionError

log = logging.getLogger(__name__)


def fusion_order(modalities: Sequence) -> Tuple[Modality, ...]:
    """Configured modalities in the memory-fusion order A, L, V."""
    chosen = {Modality.parse(m) for m in modalities}
    return tuple(Modality(m) for m in MFN_MODALITY_ORDER if Modality(m) in chosen)


class TwoLayerNet(ParamSet):
    """in -> hidden (ReLU) -> out; the caller applies the output nonlinearity."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, rng: RngState):
        super().__init__()
        self.w_1 = self.add_weight("w_1", rng, (hidden_dim, in_dim), in_dim)
        self.b_1 = self.add_bias("b_1", hidden_dim)
        self.w_2 = self.add_weight("w_2", rng, (out_dim, hidden_dim), hidden_dim)
        self.b_2 = self.add_bias("b_2", out_dim)

    def __call__(self, x: Tensor, p_dropout: float = 0.0, rng: Optional[RngState] = None,
                 training: bool = False) -> Tensor:
        hidden = dropout(relu(linear(x, self.w_1, self.b_1)), p_dropout, rng, training)
        return linear(hidden, self.w_2, self.b_2)


class MfnParams(ParamSet):
    """
    Memory Fusion Network: one LSTM per modality (hidden dim d_m), the DMAN
    network f_A, the MGM networks f_γ1, f_γ2, f_u and the output head W_MGM.

    Raises:
        ConfigurationError: fewer than two modalities
    """

    def __init__(self, input_dims: Mapping, hidden_dims: Mapping, rng: RngState,
                 d_mem: int = MEMORY_DIM, net_hidden: int = MFN_NET_HIDDEN,
                 p_dman: float = DMAN_DROPOUT, p_output: float = OUTPUT_DROPOUT):
        super().__init__()
        self.order = fusion_order(hidden_dims.keys())
        if len(self.order) < 2:
            raise ConfigurationError("memory fusion needs at least two modalities")
        self.hidden_dims = {m: int(hidden_dims[m]) for m in self.order}
        self.d_mem = d_mem
        self.p_dman = p_dman
        self.p_output = p_output
        self.lstms: Dict[Modality, LstmParams] = {
            m: self.add_child(f"lstm_{m.value}", LstmParams(int(input_dims[m]), self.hidden_dims[m], rng))
            for m in self.order
        }
        memory_in = 2 * sum(self.hidden_dims.values())
        self.memory_in = memory_in
        self.f_a = self.add_child("f_a", TwoLayerNet(memory_in, net_hidden, memory_in, rng))
        self.f_gamma1 = self.add_child("f_gamma1", TwoLayerNet(memory_in, net_hidden, d_mem, rng))
        self.f_gamma2 = self.add_child("f_gamma2", TwoLayerNet(memory_in, net_hidden, d_mem, rng))
        self.f_u = self.add_child("f_u", TwoLayerNet(memory_in, net_hidden, d_mem, rng))
        head_in = d_mem + sum(self.hidden_dims.values())
        self.w_mgm = self.add_weight("w_mgm", rng, (1, head_in), head_in)
        self.b_mgm = self.add_bias("b_mgm", 1)


def dman_step(c_now: Mapping, c_prev: Mapping, params: MfnParams,
              rng: Optional[RngState] = None, training: bool = False) -> Tuple[Tensor, Tensor]:
    """
    Delta-Memory Attention over two consecutive windows.

    C_t = [c_{m,t} for m in A, L, V] ++ [c_{m,t−τ} for m in A, L, V]
    A_t = softmax(f_A(C_t)) over the whole 2Σd_m vector
    D_t = A_t ⊙ C_t

    Returns:
        (D_t, A_t), both of length 2Σd_m
    """
    if len(params.order) < 2:
        raise ConfigurationError("memory fusion needs at least two modalities")
    cells = concat([c_now[m] for m in params.order] + [c_prev[m] for m in params.order], axis=-1)
    attention = softmax(params.f_a(cells, params.p_dman, rng, training), axis=-1)
    return attention * cells, attention


def mgm_update(u_prev: Tensor, delta: Tensor, params: MfnParams) -> Tensor:
    """
    Multi-View Gated Memory update.

    u_t = f_γ1(D_t) ⊙ u_{t−τ} + f_γ2(D_t) ⊙ tanh(f_u(D_t)), with sigmoid gates.
    """
    retain = sigmoid(params.f_gamma1(delta))
    update = sigmoid(params.f_gamma2(delta))
    proposal = tanh(params.f_u(delta))
    return retain * u_prev + update * proposal


def attention_by_modality(attention: np.ndarray, params: MfnParams) -> Dict[Modality, float]:
    """Share of one A_t falling on each modality's cells (current + previous window)."""
    attention = np.asarray(attention)
    half = len(attention) // 2
    shares, offset = {}, 0
    for m in params.order:
        width = params.hidden_dims[m]
        shares[m] = float(attention[offset:offset + width].sum() + attention[half + offset:half + offset + width].sum())
        offset += width
    return shares


def mfn_forward(sequences: Mapping, params: MfnParams, rng: Optional[RngState] = None,
                training: bool = False, trace: Optional[List[np.ndarray]] = None) -> Tensor:
    """
    Predict one rating per window with the Memory Fusion Network.

    Per window t: each modality's LSTM step -> dman_step -> mgm_update ->
    U_t = [u_t, h_A, h_L, h_V] -> dropout p=0.5 (training) -> W_MGM·U_t + b_MGM.
    Previous cells and memory start at zero.

    Args:
        sequences: modality -> (n, input_dim) tensor, all of equal length n
        params: MfnParams
        rng: dropout stream
        training: dropout on/off
        trace: collects every A_t as an ndarray

    Returns:
        Tensor: (n,) predictions

    Raises:
        DimensionError: modality sequences differ in length
    """
    missing = [m.value for m in params.order if m not in sequences]
    if missing:
        raise DimensionError(f"memory fusion is missing modality sequences {missing}")
    lengths = {m.value: sequences[m].shape[0] for m in params.order}
    if len(set(lengths.values())) != 1:
        raise DimensionError(f"modality sequences differ in length: {lengths}")
    n = next(iter(lengths.values()))
    if n == 0:
        return Tensor(np.zeros(0))

    state = {m: params.lstms[m].initial_state() for m in params.order}
    memory = Tensor(np.zeros(params.d_mem))
    outputs = []
    for t in range(n):
        c_prev = {m: state[m][1] for m in params.order}
        state = {m: lstm_step(state[m][0], state[m][1], sequences[m][t], params.lstms[m]) for m in params.order}
        delta, attention = dman_step({m: state[m][1] for m in params.order}, c_prev, params, rng, training)
        if trace is not None:
            trace.append(attention.data.copy())
        memory = mgm_update(memory, delta, params)
        fused = concat([memory] + [state[m][0] for m in params.order], axis=-1)
        outputs.append(dropout(fused, params.p_output, rng, training))
    predictions = linear(stack(outputs, axis=0), params.w_mgm, params.b_mgm)
    return reshape(predictions, (n,))

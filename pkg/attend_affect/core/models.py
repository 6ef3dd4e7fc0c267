import logging
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Any, Dict, Iterator, Mapping, Optional, Tuple

import numpy as np

from attend_affect.config import (
    CAUSAL_ATTENTION, CNN_DROPOUT, COMMON_WINDOW, DECODER_HIDDEN, DMAN_DROPOUT, EMBED_DIMS, FFN_MULTIPLIER,
    GATE_MODE, KERNEL_SIZE, MEMORY_DIM, MFN_NET_HIDDEN, MODALITY_ORDER, N_BLOCKS, N_HEADS, OUTPUT_DROPOUT,
    POSITIONAL_MODE, SYNTH_FEATURE_DIMS, TRANSFORMER_DROPOUT, WINDOW_SECONDS,
)
from attend_affect.core.embedder import EmbedderParams, embed_window
from attend_affect.core.metrics import RatingSeries
from attend_affect.core.mfn import MfnParams, mfn_forward
from attend_affect.core.params import ParamSet
from attend_affect.core.recurrent import DecoderParams, LstmParams, decode_sequence
from attend_affect.core.tensor_core import (
    RngState, Tensor, concat, getitem, linear, no_grad, reshape, tanh,
)
from attend_affect.core.transformer import TransformerParams, encode
from attend_affect.core.windowing import (
    Modality, WindowPlan, compute_n_max, n_windows, oversample_linguistic, parse_modalities, stack_stream,
)
from attend_affect.errors import ConfigurationError, DataValidationError

log = logging.getLogger(__name__)


class ModelKind(str, Enum):
    SFT = "SFT"
    MFT = "MFT"
    B1_LSTM = "B1_LSTM"
    B2_TRANS = "B2_TRANS"
    B3_MFN = "B3_MFN"

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, ModelKind):
            return value
        normalized = str(value).upper().replace("-", "_")
        aliases = {"B1": "B1_LSTM", "B2": "B2_TRANS", "B3": "B3_MFN"}
        try:
            return cls(aliases.get(normalized, normalized))
        except ValueError:
            raise ConfigurationError(
                f"unknown model kind {value!r}; expected one of {[k.value for k in cls]}") from None


FUSION_KINDS = (ModelKind.MFT, ModelKind.B3_MFN)
ENCODER_KINDS = (ModelKind.SFT, ModelKind.MFT, ModelKind.B2_TRANS)


def _round_to_multiple(value: float, multiple: int) -> int:
    return multiple * max(1, int(math.floor(value / multiple + 0.5)))


@dataclass
class ModelConfig:
    """
    Everything that determines an architecture and its initial parameters.

    Dimension maps are keyed by modality letter. `d_model` (simple fusion) and
    `encoder_dims` (memory fusion) default to the head-divisible repair:
    d_model = h·round(Σd_m / h), encoder dim = h·ceil(d_m / h).
    """
    kind: str = ModelKind.MFT.value
    modalities: str = "VAL"
    feature_dims: Dict[str, int] = field(default_factory=lambda: dict(SYNTH_FEATURE_DIMS))
    embed_dims: Dict[str, int] = field(default_factory=lambda: dict(EMBED_DIMS))
    d_model: Optional[int] = None
    encoder_dims: Dict[str, int] = field(default_factory=dict)
    decoder_hidden: int = DECODER_HIDDEN
    d_mem: int = MEMORY_DIM
    mfn_hidden: int = MFN_NET_HIDDEN
    n_heads: int = N_HEADS
    n_blocks: int = N_BLOCKS
    ffn_multiplier: int = FFN_MULTIPLIER
    kernel_size: int = KERNEL_SIZE
    gate: str = GATE_MODE
    cnn_dropout: float = CNN_DROPOUT
    transformer_dropout: float = TRANSFORMER_DROPOUT
    dman_dropout: float = DMAN_DROPOUT
    output_dropout: float = OUTPUT_DROPOUT
    positional: str = POSITIONAL_MODE
    causal: bool = CAUSAL_ATTENTION
    window_seconds: Dict[str, float] = field(default_factory=lambda: dict(WINDOW_SECONDS))
    common_window: float = COMMON_WINDOW
    n_max: Dict[str, int] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        self.kind = ModelKind.parse(self.kind).value
        self.modalities = "".join(m.value for m in parse_modalities(self.modalities))
        self.validate()

    @property
    def model_kind(self) -> ModelKind:
        return ModelKind(self.kind)

    @property
    def modality_set(self) -> Tuple[Modality, ...]:
        return parse_modalities(self.modalities)

    def validate(self) -> None:
        kind = self.model_kind
        if kind in FUSION_KINDS and len(self.modality_set) < 2:
            raise ConfigurationError(f"{kind.value} needs at least two modalities, got {self.modalities}")
        for m in self.modality_set:
            for name, dims in (("feature_dims", self.feature_dims), ("embed_dims", self.embed_dims)):
                if int(dims.get(m.value, 0)) < 1:
                    raise ConfigurationError(f"{name} has no positive entry for modality {m.value}")
        if self.d_model is not None and self.d_model % self.n_heads:
            raise ConfigurationError(f"d_model={self.d_model} is not divisible by h={self.n_heads}")
        for key, dim in self.encoder_dims.items():
            if dim % self.n_heads:
                raise ConfigurationError(f"encoder dim {dim} for {key} is not divisible by h={self.n_heads}")
        if self.kernel_size < 1:
            raise ConfigurationError("kernel_size must be >= 1")

    def resolved_d_model(self) -> int:
        if self.d_model is not None:
            return int(self.d_model)
        total = sum(int(self.embed_dims[m.value]) for m in self.modality_set)
        return _round_to_multiple(total, self.n_heads)

    def resolved_encoder_dim(self, modality: Modality) -> int:
        if modality.value in self.encoder_dims:
            return int(self.encoder_dims[modality.value])
        return self.n_heads * int(math.ceil(int(self.embed_dims[modality.value]) / self.n_heads))

    def window_plan(self) -> WindowPlan:
        return WindowPlan(tau_m=dict(self.window_seconds), tau=self.common_window, n_max=dict(self.n_max))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {unknown}")
        return cls(**dict(payload))


class Model(ParamSet):
    """
    Parameters of one configured architecture plus its train/eval mode.

    SFT      embedders -> fuse_simple -> encode -> LSTM decode
    MFT      embedders -> per-modality projection -> per-modality encode -> MFN
    B1_LSTM  embedders -> fuse_simple -> LSTM decode
    B2_TRANS embedders -> fuse_simple -> encode -> per-window linear head
    B3_MFN   embedders -> per-modality projection -> MFN
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.kind = config.model_kind
        self.modalities = config.modality_set
        self.training = False
        self.dropout_rng = RngState(config.seed, key=(1,))
        rng = RngState(config.seed)

        self.embedders: Dict[Modality, EmbedderParams] = {}
        for m in self.modalities:
            self.embedders[m] = self.add_child(f"embed_{m.value}", EmbedderParams(
                m, int(config.feature_dims[m.value]), int(config.embed_dims[m.value]), rng,
                kernel_size=config.kernel_size, gate=config.gate, p_dropout=config.cnn_dropout))

        if self.kind in FUSION_KINDS:
            self._build_memory_fusion(rng)
        else:
            self._build_simple_fusion(rng)

    def _transformer(self, d_model: int, rng: RngState) -> TransformerParams:
        c = self.config
        return TransformerParams(d_model, rng, n_heads=c.n_heads, n_blocks=c.n_blocks,
                                 ffn_dim=c.ffn_multiplier * d_model, p_dropout=c.transformer_dropout,
                                 positional=c.positional, causal=c.causal)

    def _build_simple_fusion(self, rng: RngState) -> None:
        c = self.config
        fused_in = sum(self.embedders[m].d_m for m in self.modalities)
        self.d_model = c.resolved_d_model()
        self.fusion = self.add_child("fusion", ParamSet())
        self.w_fuse = self.fusion.add_weight("weight", rng, (self.d_model, fused_in), fused_in)
        self.b_fuse = self.fusion.add_bias("bias", self.d_model)
        if self.kind in ENCODER_KINDS:
            self.encoder = self.add_child("encoder", self._transformer(self.d_model, rng))
        if self.kind == ModelKind.B2_TRANS:
            self.head = self.add_child("head", DecoderParams(self.d_model, rng))
        else:
            self.lstm = self.add_child("lstm", LstmParams(self.d_model, c.decoder_hidden, rng))
            self.decoder = self.add_child("decoder", DecoderParams(c.decoder_hidden, rng))

    def _build_memory_fusion(self, rng: RngState) -> None:
        c = self.config
        self.projections: Dict[Modality, Tuple[Tensor, Tensor]] = {}
        self.encoders: Dict[Modality, TransformerParams] = {}
        input_dims = {}
        for m in self.modalities:
            d_m, d_enc = self.embedders[m].d_m, c.resolved_encoder_dim(m)
            projection = self.add_child(f"project_{m.value}", ParamSet())
            self.projections[m] = (projection.add_weight("weight", rng, (d_enc, d_m), d_m),
                                   projection.add_bias("bias", d_enc))
            if self.kind == ModelKind.MFT:
                self.encoders[m] = self.add_child(f"encoder_{m.value}", self._transformer(d_enc, rng))
            input_dims[m] = d_enc
        self.mfn = self.add_child("mfn", MfnParams(
            input_dims, {m: self.embedders[m].d_m for m in self.modalities}, rng,
            d_mem=c.d_mem, net_hidden=c.mfn_hidden, p_dman=c.dman_dropout, p_output=c.output_dropout))

    # ---- mode ----
    def train_mode(self) -> "Model":
        self.training = True
        return self

    def eval_mode(self) -> "Model":
        self.training = False
        return self

    @contextmanager
    def evaluating(self) -> Iterator["Model"]:
        previous = self.training
        self.training = False
        try:
            yield self
        finally:
            self.training = previous

    # ---- forward ----
    def embed(self, modality: Modality, windows: np.ndarray, count: int) -> Tensor:
        """Embed (coarse, |v_m|, n_max) windows and bring them to `count` common windows."""
        embedded = embed_window(Tensor(windows), self.embedders[modality], self.dropout_rng, self.training)
        factor = int(round(self.config.window_seconds[modality.value] / self.config.common_window))
        if factor > 1:
            embedded = oversample_linguistic(embedded, factor)
        return getitem(embedded, slice(0, count))

    def forward(self, windows: Mapping[Modality, np.ndarray], count: int,
                attention: Optional[Dict[str, list]] = None) -> Tensor:
        """
        Predict `count` windows from stacked modality windows.

        Args:
            windows: modality -> (coarse windows, |v_m|, n_max) array
            count: number of 1-s output windows
            attention: optional collector; receives "encoder" / "encoder_<m>"
                head matrices and "memory" DMAN vectors

        Returns:
            Tensor: (count,) predictions
        """
        missing = [m.value for m in self.modalities if m not in windows]
        if missing:
            raise DataValidationError(f"clip is missing modality streams {missing}")
        if count == 0:
            return Tensor(np.zeros(0))
        embeddings = {m: self.embed(m, windows[m], count) for m in self.modalities}
        rng, training = self.dropout_rng, self.training

        if self.kind in FUSION_KINDS:
            sequences = {}
            for m in self.modalities:
                x = linear(embeddings[m], *self.projections[m])
                if self.kind == ModelKind.MFT:
                    trace = attention.setdefault(f"encoder_{m.value}", []) if attention is not None else None
                    x = encode(x, self.encoders[m], rng, training, trace)
                sequences[m] = x
            memory_trace = attention.setdefault("memory", []) if attention is not None else None
            return mfn_forward(sequences, self.mfn, rng, training, memory_trace)

        fused = fuse_simple(embeddings, self)
        if self.kind in ENCODER_KINDS:
            trace = attention.setdefault("encoder", []) if attention is not None else None
            fused = encode(fused, self.encoder, rng, training, trace)
        if self.kind == ModelKind.B2_TRANS:
            return reshape(linear(fused, self.head.weight, self.head.bias), (count,))
        return decode_sequence(fused, self.lstm, self.decoder)


def fuse_simple(embeddings: Mapping[Modality, Tensor], model: Model) -> Tensor:
    """
    Concatenate per-modality embeddings in V, A, L order, project to d_model, tanh.

    Raises:
        DataValidationError: an embedding of a configured modality is missing
    """
    order = [Modality(m) for m in MODALITY_ORDER if Modality(m) in model.modalities]
    missing = [m.value for m in order if m not in embeddings]
    if missing:
        raise DataValidationError(f"simple fusion is missing embeddings for {missing}")
    return tanh(linear(concat([embeddings[m] for m in order], axis=-1), model.w_fuse, model.b_fuse))


def build_model(config: ModelConfig) -> Model:
    """Build and initialize a model; the same config and seed give identical parameters."""
    model = Model(config)
    log.info("built %s(%s) with %d parameters", config.kind, config.modalities, model.parameter_count())
    return model


def prepare_clip(clip, plan: WindowPlan, modalities, kernel_size: int = KERNEL_SIZE) -> Tuple[Dict[Modality, np.ndarray], int]:
    """
    Stack every configured modality of a clip into coarse windows.

    Returns:
        (modality -> (ceil(count / factor), |v_m|, n_max) array, count) where
        count = floor(duration / tau)

    Raises:
        DataValidationError: the clip lacks a configured modality
    """
    count = n_windows(clip.duration, plan.tau)
    windows = {}
    for m in modalities:
        stream = clip.streams.get(m)
        if stream is None:
            raise DataValidationError(f"clip {clip.clip_id} has no {m.value} stream")
        n_max = plan.n_max.get(m) or max(compute_n_max([clip], m, plan.tau_m[m]), kernel_size)
        coarse = int(math.ceil(count / plan.factor(m)))
        windows[m] = stack_stream(stream, plan.tau_m[m], n_max, coarse)
    return windows, count


def clip_forward(model: Model, clip, attention: Optional[Dict[str, list]] = None) -> Tensor:
    windows, count = prepare_clip(clip, model.config.window_plan(), model.modalities, model.config.kernel_size)
    return model.forward(windows, count, attention)


def predict_clip(model: Model, clip, attention: Optional[Dict[str, list]] = None) -> RatingSeries:
    """
    One valence prediction per common window, in eval mode.

    Example:
        10 s clip -> 10 predictions
    """
    with model.evaluating(), no_grad():
        prediction = clip_forward(model, clip, attention)
    return RatingSeries(prediction.data.copy(), model.config.common_window)

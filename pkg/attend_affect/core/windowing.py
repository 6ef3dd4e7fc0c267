import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from attend_affect.config import COMMON_WINDOW, KERNEL_SIZE, WINDOW_EPS, WINDOW_SECONDS
from attend_affect.core.metrics import RatingSeries
from attend_affect.core.tensor_core import Tensor, getitem
from attend_affect.errors import ConfigurationError, DataValidationError, MetricError

log = logging.getLogger(__name__)


class Modality(str, Enum):
    VISUAL = "V"
    ACOUSTIC = "A"
    LINGUISTIC = "L"

    @classmethod
    def parse(cls, value: Union[str, "Modality"]) -> "Modality":
        if isinstance(value, Modality):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ConfigurationError(f"unknown modality {value!r}; expected one of V, A, L") from None


def parse_modalities(letters: Union[str, Iterable]) -> tuple:
    """'VAL' or ['L', 'V'] -> tuple of distinct Modality values in V, A, L order."""
    chosen = {Modality.parse(m) for m in letters}
    if not chosen:
        raise ConfigurationError("at least one modality is required")
    return tuple(m for m in Modality if m in chosen)


class ModalityStream:
    """
    Timestamped feature vectors of one modality for one clip.

    Args:
        modality: V, A or L
        timestamps: (n,) seconds, non-decreasing
        values: (n, dim)
    """

    def __init__(self, modality: Union[str, Modality], timestamps: Sequence[float], values, dim: Optional[int] = None):
        self.modality = Modality.parse(modality)
        self.timestamps = np.array(timestamps, dtype=np.float64).reshape(-1)
        values = np.array(values, dtype=np.float64)
        if values.size == 0:
            values = values.reshape(0, dim or 0)
        self.values = values.reshape(len(self.timestamps), -1) if values.ndim == 1 else values
        self.dim = int(dim if dim is not None else self.values.shape[1])
        if self.values.shape != (len(self.timestamps), self.dim):
            raise DataValidationError(
                f"{self.modality.value} stream: values shape {self.values.shape} does not match "
                f"{len(self.timestamps)} samples of dim {self.dim}")
        if np.any(np.diff(self.timestamps) < 0):
            raise DataValidationError(f"{self.modality.value} stream: timestamps must be non-decreasing")

    def __len__(self) -> int:
        return len(self.timestamps)

    def __eq__(self, other) -> bool:
        return (isinstance(other, ModalityStream) and self.modality == other.modality
                and self.dim == other.dim
                and np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.values, other.values))

    def __repr__(self) -> str:
        return f"ModalityStream({self.modality.value}, n={len(self)}, dim={self.dim})"


def window_index(timestamps: np.ndarray, tau_m: float) -> np.ndarray:
    """Global grid index of each timestamp: t lies in [i·tau_m, (i+1)·tau_m)."""
    return np.floor(np.asarray(timestamps) / tau_m + WINDOW_EPS).astype(np.int64)


def n_windows(duration: float, tau: float = COMMON_WINDOW) -> int:
    """Number of full windows; a final partial window is dropped."""
    return int(math.floor(duration / tau + WINDOW_EPS))


@dataclass
class WindowPlan:
    """
    Window widths per modality, the common output window, and n_max.

    n_max is the column count of every stacked window; it is never below
    the conv kernel size so that every window survives the convolution.
    """
    tau_m: Dict[Modality, float] = field(default_factory=lambda: {Modality(k): v for k, v in WINDOW_SECONDS.items()})
    tau: float = COMMON_WINDOW
    n_max: Dict[Modality, int] = field(default_factory=dict)

    def __post_init__(self):
        self.tau_m = {Modality.parse(k): float(v) for k, v in self.tau_m.items()}
        self.n_max = {Modality.parse(k): int(v) for k, v in self.n_max.items()}
        for modality, width in self.tau_m.items():
            if width <= 0:
                raise ConfigurationError(f"window width for {modality.value} must be positive")
            ratio = width / self.tau
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                raise ConfigurationError(
                    f"window width {width} s for {modality.value} is not a multiple of tau={self.tau}")
        for modality, count in self.n_max.items():
            if count < 1:
                raise ConfigurationError(f"n_max for {modality.value} must be >= 1")

    def factor(self, modality: Modality) -> int:
        return int(round(self.tau_m[modality] / self.tau))

    def to_dict(self) -> Dict:
        return {"tau_m": {m.value: v for m, v in self.tau_m.items()}, "tau": self.tau,
                "n_max": {m.value: v for m, v in self.n_max.items()}}

    @classmethod
    def from_dict(cls, payload: Mapping) -> "WindowPlan":
        return cls(tau_m=dict(payload.get("tau_m", WINDOW_SECONDS)), tau=float(payload.get("tau", COMMON_WINDOW)),
                   n_max=dict(payload.get("n_max", {})))


def compute_n_max(clips: Iterable, modality: Union[str, Modality], tau_m: float) -> int:
    """
    Maximum number of samples that fall in any window of the global grid.

    Args:
        clips: NarrativeClip objects (anything with `.streams`)
        modality: modality to scan
        tau_m: window width of that modality in seconds

    Returns:
        int: max over clips and window starts t in {0, tau_m, ...} of
            |{samples with t <= timestamp < t + tau_m}|

    Raises:
        DataValidationError: no clip carries the modality.
    """
    modality = Modality.parse(modality)
    best, seen = 0, False
    for clip in clips:
        stream = clip.streams.get(modality)
        if stream is None:
            continue
        seen = True
        if len(stream):
            best = max(best, int(np.bincount(window_index(stream.timestamps, tau_m)).max()))
    if not seen:
        raise DataValidationError(f"modality {modality.value} is absent from every clip")
    return max(best, 1)


def build_plan(clips: Sequence, modalities: Iterable, tau_m: Optional[Mapping] = None,
               tau: float = COMMON_WINDOW, kernel_size: int = KERNEL_SIZE) -> WindowPlan:
    """WindowPlan whose n_max comes from the corpus, floored at the kernel size."""
    widths = {Modality.parse(k): float(v) for k, v in (tau_m or WINDOW_SECONDS).items()}
    n_max = {}
    for modality in parse_modalities(modalities):
        n_max[modality] = max(compute_n_max(clips, modality, widths[modality]), kernel_size)
        log.debug("n_max[%s] = %d", modality.value, n_max[modality])
    return WindowPlan(tau_m=widths, tau=tau, n_max=n_max)


def _window_matrix(stream: ModalityStream, index: np.ndarray, window: int, n_max: int) -> np.ndarray:
    inside = np.flatnonzero(index == window)
    if len(inside) > n_max:
        log.warning("%s window %d holds %d samples > n_max=%d; keeping the first %d",
                    stream.modality.value, window, len(inside), n_max, n_max)
        inside = inside[:n_max]
    if len(inside) == 0:
        earlier = np.flatnonzero(index < window)
        if len(earlier) == 0:
            return np.zeros((stream.dim, n_max))
        inside = earlier[-1:]
    columns = stream.values[inside].T
    padding = np.repeat(columns[:, -1:], n_max - columns.shape[1], axis=1)
    return np.concatenate([columns, padding], axis=1)


def stack_window(stream: ModalityStream, t: float, tau_m: float, n_max: int) -> Tensor:
    """
    Stack the samples of [t, t + tau_m) column-wise into a |v_m| x n_max matrix.

    Fewer than n_max samples: the last column is repeated. Empty window: the
    most recent earlier sample is repeated, or zeros if there is none.

    Example:
        samples v@0.0, u@0.5, n_max=3, t=0, tau_m=1 -> [v, u, u]
    """
    index = window_index(stream.timestamps, tau_m)
    return Tensor(_window_matrix(stream, index, int(window_index(np.array([t]), tau_m)[0]), n_max))


def stack_stream(stream: ModalityStream, tau_m: float, n_max: int, count: int) -> np.ndarray:
    """All windows 0..count-1 of a stream as a (count, |v_m|, n_max) array."""
    index = window_index(stream.timestamps, tau_m)
    if count == 0:
        return np.zeros((0, stream.dim, n_max))
    return np.stack([_window_matrix(stream, index, w, n_max) for w in range(count)])


def oversample_linguistic(embeddings: Union[Tensor, Sequence], factor: int = 5):
    """
    Repeat each coarse-window embedding `factor` times.

    Tensors (n, d) keep their gradient path; plain sequences return a list.

    Example:
        [e1, e2] -> [e1]*5 + [e2]*5
    """
    if isinstance(embeddings, Tensor):
        if embeddings.shape[0] == 0:
            return embeddings
        return getitem(embeddings, np.repeat(np.arange(embeddings.shape[0]), factor))
    return [e for e in embeddings for _ in range(factor)]


def align_ratings(ratings: RatingSeries, tau: float, count: int) -> RatingSeries:
    """
    Average a rating trace into `count` windows of width tau.

    Each window takes the mean of ratings timestamped in [t, t + tau). Windows
    past the end of the trace, or holding no rating, repeat the previous value.

    Raises:
        MetricError: empty rating series
    """
    if len(ratings) == 0:
        raise MetricError("cannot align an empty rating series")
    index = window_index(ratings.timestamps, tau)
    sums = np.bincount(index, weights=ratings.values, minlength=count)[:count]
    counts = np.bincount(index, minlength=count)[:count]
    aligned = np.empty(count)
    previous = ratings.values[0]
    for w in range(count):
        if counts[w] > 0:
            previous = sums[w] / counts[w]
        aligned[w] = previous
    return RatingSeries(aligned, tau)


def resample_ratings(timestamps: Sequence[float], values: Sequence[float], period: float, count: int) -> RatingSeries:
    """Linear interpolation of an irregular trace onto `count` points of a `period` grid (ends held)."""
    grid = np.arange(count) * period
    return RatingSeries(np.interp(grid, np.asarray(timestamps, dtype=np.float64), np.asarray(values, dtype=np.float64)), period)

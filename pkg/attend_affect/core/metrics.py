import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from attend_affect.config import EWE_MIN_WEIGHT_SUM, RATING_PERIOD
from attend_affect.errors import MetricError

log = logging.getLogger(__name__)


class RatingSeries:
    """
    Uniformly sampled valence trace: value i sits at time i * period.

    Used for observer annotations (period 0.5 s), gold standards and model
    predictions (period 1 s). Annotations live in [-1, 1]; predictions are
    not clamped.
    """

    def __init__(self, values: Sequence[float], period: float = RATING_PERIOD):
        self.values = np.array(values, dtype=np.float64).reshape(-1)
        self.period = float(period)
        if np.isnan(self.values).any():
            raise MetricError("rating series contains NaN")

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        return (isinstance(other, RatingSeries) and self.period == other.period
                and np.array_equal(self.values, other.values))

    def __repr__(self) -> str:
        return f"RatingSeries(n={len(self)}, period={self.period})"

    @property
    def timestamps(self) -> np.ndarray:
        return np.arange(len(self.values)) * self.period


SeriesLike = Union[RatingSeries, Sequence[float], np.ndarray]


def _values(series: SeriesLike) -> np.ndarray:
    if isinstance(series, RatingSeries):
        return series.values
    return np.asarray(series, dtype=np.float64).reshape(-1)


def pearson(x: SeriesLike, y: SeriesLike) -> float:
    """Pearson correlation; 0 when either series is constant."""
    x, y = _values(x), _values(y)
    dx, dy = x - x.mean(), y - y.mean()
    denom = np.sqrt(np.mean(dx * dx) * np.mean(dy * dy))
    return float(np.mean(dx * dy) / denom) if denom > 0 else 0.0


def ccc(x: SeriesLike, y: SeriesLike) -> float:
    """
    Concordance correlation coefficient with population (1/N) variances.

    CCC = 2·Corr·σx·σy / (σx² + σy² + (μx − μy)²), computed through the
    covariance so that one constant series gives 0 instead of 0/0.

    Args:
        x, y: equal-length series, length >= 2

    Returns:
        float: value in [-1, 1]. Two constant series give 1 when their means
            agree and 0 otherwise.

    Raises:
        MetricError: length mismatch or fewer than 2 values.

    Example:
        ccc([1, 2, 3], [2, 3, 4]) = (4/3) / (2/3 + 2/3 + 1) = 4/7
    """
    x, y = _values(x), _values(y)
    if len(x) != len(y):
        raise MetricError(f"ccc needs equal lengths, got {len(x)} and {len(y)}")
    if len(x) < 2:
        raise MetricError(f"ccc needs at least 2 values, got {len(x)}")
    mx, my = x.mean(), y.mean()
    vx, vy = np.mean((x - mx) ** 2), np.mean((y - my) ** 2)
    if vx == 0.0 and vy == 0.0:
        return 1.0 if mx == my else 0.0
    covariance = np.mean((x - mx) * (y - my))
    return float(2.0 * covariance / (vx + vy + (mx - my) ** 2))


@dataclass
class GoldStandard:
    """EWE output together with the observer weights that produced it."""
    series: RatingSeries
    weights: np.ndarray
    used_fallback: bool = False


def evaluator_weighted_estimate(ratings: Sequence[RatingSeries], clamp_negative: bool = False) -> GoldStandard:
    """
    Evaluator Weighted Estimator over observer traces.

    w_j = Corr(r_j, r̄) with r̄ the unweighted mean; the gold standard is
    Σ w_j r_j / Σ w_j. When |Σ w_j| < EWE_MIN_WEIGHT_SUM the unweighted mean
    is returned and `used_fallback` is set.

    Args:
        ratings: one or more equal-length observer series
        clamp_negative: replace negative weights by 0 (sensitivity studies)

    Raises:
        MetricError: no observers or unequal lengths
    """
    if len(ratings) == 0:
        raise MetricError("ewe needs at least one observer")
    lengths = {len(r) for r in ratings}
    if len(lengths) != 1:
        raise MetricError(f"ewe needs equal-length observer series, got lengths {sorted(lengths)}")
    matrix = np.stack([_values(r) for r in ratings])
    average = matrix.mean(axis=0)
    weights = np.array([pearson(row, average) for row in matrix])
    if clamp_negative:
        weights = np.maximum(weights, 0.0)
    total = weights.sum()
    period = ratings[0].period if isinstance(ratings[0], RatingSeries) else RATING_PERIOD
    if abs(total) < EWE_MIN_WEIGHT_SUM:
        log.warning("EWE weights sum to %.2e over %d observers; using the unweighted mean", total, len(ratings))
        return GoldStandard(RatingSeries(average, period), weights, used_fallback=True)
    return GoldStandard(RatingSeries(weights @ matrix / total, period), weights)


def ewe(ratings: Sequence[RatingSeries], clamp_negative: bool = False) -> RatingSeries:
    """
    Gold-standard series from observer traces (see evaluator_weighted_estimate).

    Example:
        r1=[0,1,2], r2=[0,2,4] -> both weights 1 -> [0, 1.5, 3]
    """
    return evaluator_weighted_estimate(ratings, clamp_negative).series


def human_benchmark(ratings: Sequence[RatingSeries], clamp_negative: bool = False) -> float:
    """
    Leave-one-out human agreement for one clip.

    Mean over observers j of CCC(r_j, EWE of every other observer).

    Raises:
        MetricError: fewer than 2 observers
    """
    if len(ratings) < 2:
        raise MetricError(f"human benchmark needs at least 2 observers, got {len(ratings)}")
    scores = []
    for j, held_out in enumerate(ratings):
        others = [r for i, r in enumerate(ratings) if i != j]
        scores.append(ccc(held_out, ewe(others, clamp_negative)))
    return float(np.mean(scores))


def top_changes(prediction: SeriesLike, k: int) -> List[Tuple[int, float]]:
    """
    Windows with the greatest change in valence from the previous window.

    Args:
        prediction: series of length >= 2
        k: number of windows to return (all n-1 when k >= n-1)

    Returns:
        List[Tuple[int, float]]: (window index, signed delta) ranked by |delta|
            descending, earlier window first on ties.

    Example:
        [0, 0.1, -0.4, -0.35], k=1 -> [(2, -0.5)]
    """
    if k <= 0:
        raise MetricError(f"k must be positive, got {k}")
    values = _values(prediction)
    if len(values) < 2:
        raise MetricError(f"top_changes needs at least 2 windows, got {len(values)}")
    deltas = np.diff(values)
    order = np.argsort(-np.abs(deltas), kind="stable")
    return [(int(i) + 1, float(deltas[i])) for i in order[:k]]


@dataclass
class EvalReport:
    """
    Per-clip CCC values for one partition, with mean ± std (population std).

    Optionally carries per-clip human benchmark values, split provenance
    (target ids of the partition) and the effective configuration.
    """
    split: str
    model: str
    modalities: str
    clip_ids: List[str]
    ccc_values: List[float]
    human_values: Optional[List[float]] = None
    targets: List[str] = field(default_factory=list)
    synthetic: bool = False
    ewe_fallbacks: int = 0
    config: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.clip_ids) != len(self.ccc_values):
            raise MetricError("EvalReport needs one CCC value per clip")

    @property
    def mean(self) -> float:
        return float(np.mean(self.ccc_values))

    @property
    def std(self) -> float:
        return float(np.std(self.ccc_values))

    @property
    def human_mean(self) -> Optional[float]:
        return None if self.human_values is None else float(np.mean(self.human_values))

    @property
    def human_std(self) -> Optional[float]:
        return None if self.human_values is None else float(np.std(self.human_values))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "split": self.split,
            "model": self.model,
            "modalities": self.modalities,
            "synthetic": self.synthetic,
            "targets": list(self.targets),
            "clips": [
                {"clip_id": cid, "ccc": value,
                 **({"human": self.human_values[i]} if self.human_values is not None else {})}
                for i, (cid, value) in enumerate(zip(self.clip_ids, self.ccc_values))
            ],
            "mean": self.mean,
            "std": self.std,
            "human_mean": self.human_mean,
            "human_std": self.human_std,
            "ewe_fallbacks": self.ewe_fallbacks,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "EvalReport":
        clips = payload["clips"]
        human = [c["human"] for c in clips] if clips and "human" in clips[0] else None
        return cls(
            split=payload["split"],
            model=payload["model"],
            modalities=payload["modalities"],
            clip_ids=[c["clip_id"] for c in clips],
            ccc_values=[float(c["ccc"]) for c in clips],
            human_values=human,
            targets=list(payload.get("targets", [])),
            synthetic=bool(payload.get("synthetic", False)),
            ewe_fallbacks=int(payload.get("ewe_fallbacks", 0)),
            config=dict(payload.get("config", {})),
        )

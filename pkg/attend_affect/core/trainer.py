import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from attend_affect.config import (
    ADAM_BETA1, ADAM_BETA2, ADAM_EPS, CLIP_NORM, LEARNING_RATE, MAX_EPOCHS, PATIENCE, THREADS_ENV,
)
from attend_affect.core.checkpoint import save_checkpoint
from attend_affect.core.dataset import CorpusSplit, NarrativeClip
from attend_affect.core.metrics import EvalReport, RatingSeries, ccc, evaluator_weighted_estimate, human_benchmark
from attend_affect.core.models import Model, ModelConfig, build_model, clip_forward, predict_clip
from attend_affect.core.tensor_core import RngState, Tensor, backward, mse
from attend_affect.core.windowing import align_ratings, n_windows
from attend_affect.errors import ConfigurationError, DataValidationError, NumericError

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = LEARNING_RATE
    max_epochs: int = MAX_EPOCHS
    patience: int = PATIENCE
    clip_norm: float = CLIP_NORM
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    clamp_ewe: bool = False
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.lr < 0:
            raise ConfigurationError(f"learning rate must be non-negative, got {self.lr}")
        if self.max_epochs < 1:
            raise ConfigurationError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ConfigurationError(f"patience must be >= 1, got {self.patience}")
        if self.clip_norm <= 0:
            raise ConfigurationError(f"clip_norm must be positive, got {self.clip_norm}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigurationError("Adam betas must lie in [0, 1)")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be non-negative, got {self.seed}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ConfigurationError(f"unknown train config keys: {unknown}")
        return cls(**dict(payload))


@dataclass
class TrainHistory:
    """Per-epoch mean training loss and validation mean CCC, and the epoch kept."""
    train_loss: List[float] = field(default_factory=list)
    val_ccc: List[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_ccc: float = float("-inf")
    stopped_early: bool = False
    checkpoint: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "TrainHistory":
        return cls(**{k: payload[k] for k in (f.name for f in fields(cls)) if k in payload})


class Adam:
    """
    Adam with bias correction over a fixed parameter list.

    Example:
        opt = Adam(model.parameters(), lr=1e-3)
        backward(loss); opt.step(); model.zero_grad()
    """

    def __init__(self, params: Sequence[Tensor], lr: float = LEARNING_RATE, beta1: float = ADAM_BETA1,
                 beta2: float = ADAM_BETA2, eps: float = ADAM_EPS):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def clip_gradients(params: Sequence[Tensor], max_norm: float) -> float:
    """Rescale all gradients so their joint L2 norm is at most max_norm; returns the norm before clipping."""
    grads = [p.grad for p in params if p.grad is not None]
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


def gold_target(clip: NarrativeClip, tau: float, clamp_negative: bool = False) -> Tuple[RatingSeries, bool]:
    """
    EWE gold standard of a clip averaged onto its common windows.

    Returns:
        (aligned series of n_windows(duration, tau) values, whether EWE fell back to the mean)
    """
    if not clip.ratings:
        raise DataValidationError(f"clip {clip.clip_id} has no observer ratings")
    gold = evaluator_weighted_estimate(clip.ratings, clamp_negative)
    return align_ratings(gold.series, tau, n_windows(clip.duration, tau)), gold.used_fallback


def eval_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, threads)


def _check_disjoint(split: CorpusSplit) -> None:
    shared = {c.target_id for c in split.train} & {c.target_id for c in split.test}
    if shared:
        raise DataValidationError(f"targets {sorted(shared)} appear in both train and test")


def _check_unseen(clips: Sequence[NarrativeClip], train_targets: Iterable[str], split_name: str) -> None:
    shared = {c.target_id for c in clips} & set(train_targets)
    if shared:
        raise DataValidationError(f"the {split_name} partition holds training targets {sorted(shared)}")


def _usable(clips: Sequence[NarrativeClip], tau: float) -> List[NarrativeClip]:
    kept = [c for c in clips if n_windows(c.duration, tau) >= 2]
    if len(kept) < len(clips):
        log.warning("skipping %d clip(s) shorter than two windows", len(clips) - len(kept))
    return kept


def mean_ccc(model: Model, clips: Sequence[NarrativeClip], clamp_negative: bool = False) -> float:
    tau = model.config.common_window
    values = []
    for clip in _usable(clips, tau):
        target, _ = gold_target(clip, tau, clamp_negative)
        values.append(ccc(predict_clip(model, clip), target))
    if not values:
        raise DataValidationError("no clip long enough to score")
    return float(np.mean(values))


def train(model: Model, split: CorpusSplit, config: Optional[TrainConfig] = None,
          checkpoint_path: Optional[Union[str, Path]] = None) -> TrainHistory:
    """
    Fit a model on split.train with per-clip MSE against the aligned EWE gold standard.

    One step per clip, clips shuffled each epoch by a seeded generator, Adam
    with global-norm gradient clipping. After each epoch the validation mean
    CCC is computed in eval mode; training stops after `patience` epochs
    without improvement and the best epoch's parameters are restored (and
    saved to `checkpoint_path` if given).

    Args:
        model: freshly built Model
        split: target-disjoint CorpusSplit
        config: TrainConfig
        checkpoint_path: optional .npz destination for the best parameters

    Returns:
        TrainHistory

    Raises:
        DataValidationError: a target is shared between train and test, or train/val is empty
        NumericError: a loss became NaN or infinite
    """
    config = config or TrainConfig()
    _check_disjoint(split)
    tau = model.config.common_window
    train_clips = _usable(split.train.clips, tau)
    if not train_clips:
        raise DataValidationError("the train partition has no usable clips")
    if not split.val.clips:
        raise DataValidationError("the val partition is empty; early stopping needs validation clips")

    targets = {c.clip_id: gold_target(c, tau, config.clamp_ewe)[0].values for c in train_clips}
    params = model.parameters()
    optimizer = Adam(params, config.lr, config.beta1, config.beta2, config.eps)
    shuffler = RngState(config.seed, key=(2,))
    model.dropout_rng = RngState(config.seed, key=(3,))
    history = TrainHistory(checkpoint=str(checkpoint_path) if checkpoint_path else None)
    best_state = model.state_dict()
    stale = 0

    log.info("training %s(%s) on %d clips for up to %d epochs", model.config.kind, model.config.modalities,
             len(train_clips), config.max_epochs)
    for epoch in range(config.max_epochs):
        model.train_mode()
        losses = []
        for i in shuffler.permutation(len(train_clips)):
            clip = train_clips[i]
            model.zero_grad()
            loss = mse(clip_forward(model, clip), targets[clip.clip_id])
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"loss became {value} on clip {clip.clip_id} in epoch {epoch}")
            backward(loss)
            norm = clip_gradients(params, config.clip_norm)
            log.debug("clip %s: loss %.5f, gradient norm %.4f", clip.clip_id, value, norm)
            if not math.isfinite(norm):
                raise NumericError(f"gradient norm became {norm} on clip {clip.clip_id} in epoch {epoch}")
            optimizer.step()
            losses.append(value)
        model.zero_grad()
        model.eval_mode()

        val = mean_ccc(model, split.val.clips, config.clamp_ewe)
        history.train_loss.append(float(np.mean(losses)))
        history.val_ccc.append(val)
        log.info("epoch %d: train loss %.5f, val CCC %.4f", epoch, history.train_loss[-1], val)
        if val > history.best_val_ccc:
            history.best_val_ccc = val
            history.best_epoch = epoch
            best_state = model.state_dict()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                history.stopped_early = True
                log.info("no validation improvement for %d epochs; stopping", stale)
                break

    model.load_state_dict(best_state)
    model.eval_mode()
    log.info("kept epoch %d (val CCC %.4f)", history.best_epoch, history.best_val_ccc)
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path, history=history.to_dict(),
                        extra={"train": config.to_dict(), "train_targets": sorted({c.target_id for c in split.train})})
    return history


def _score_clip(model: Model, clip: NarrativeClip, human: bool, clamp_negative: bool) -> Tuple[float, Optional[float], bool]:
    target, fallback = gold_target(clip, model.config.common_window, clamp_negative)
    value = ccc(predict_clip(model, clip), target)
    log.debug("clip %s: CCC %.4f", clip.clip_id, value)
    bench = human_benchmark(clip.ratings, clamp_negative) if human else None
    return value, bench, fallback


def evaluate(model: Model, clips: Sequence[NarrativeClip], split_name: str = "test", human: bool = False,
             clamp_negative: bool = False, config: Optional[Mapping[str, Any]] = None,
             synthetic: bool = False, train_targets: Optional[Iterable[str]] = None) -> EvalReport:
    """
    CCC of the model against the aligned EWE gold standard for every clip.

    Clips are scored on `ATTEND_AFFECT_THREADS` worker threads (default 1);
    the report keeps clip order regardless.

    Args:
        train_targets: target ids the model was trained on (checkpoint extra
            "train_targets"); clips of these targets may not be scored

    Raises:
        DataValidationError: no scorable clip, or a clip shares a target with training
    """
    if train_targets is not None:
        _check_unseen(clips, train_targets, split_name)
    scorable = _usable(clips, model.config.common_window)
    if not scorable:
        raise DataValidationError(f"the {split_name} partition has no scorable clips")
    threads = eval_threads()
    with model.evaluating():
        if threads == 1:
            results = [_score_clip(model, c, human, clamp_negative) for c in scorable]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lambda c: _score_clip(model, c, human, clamp_negative), scorable))
    report = EvalReport(
        split=split_name,
        model=model.config.kind,
        modalities=model.config.modalities,
        clip_ids=[c.clip_id for c in scorable],
        ccc_values=[r[0] for r in results],
        human_values=[r[1] for r in results] if human else None,
        targets=sorted({c.target_id for c in scorable}),
        synthetic=synthetic,
        ewe_fallbacks=sum(1 for r in results if r[2]),
        config=dict(config or {"model": model.config.to_dict()}),
    )
    log.info("%s CCC on %s: %.4f ± %.4f over %d clips", model.config.kind, split_name, report.mean, report.std,
             len(scorable))
    return report


def human_report(clips: Sequence[NarrativeClip], split_name: str = "test", clamp_negative: bool = False,
                 synthetic: bool = False) -> EvalReport:
    """Leave-one-out human benchmark for a partition, shaped like a model report."""
    if not clips:
        raise DataValidationError(f"the {split_name} partition is empty")
    values = [human_benchmark(c.ratings, clamp_negative) for c in clips]
    return EvalReport(split=split_name, model="HUMAN", modalities="", clip_ids=[c.clip_id for c in clips],
                      ccc_values=values, human_values=values, targets=sorted({c.target_id for c in clips}),
                      synthetic=synthetic)


# ---------------------
# Results table
# ---------------------
@dataclass
class SweepCell:
    """One table cell: per-clip CCC of a kind/subset on a partition, pooled over seeds."""
    kind: str
    modalities: str
    partition: str
    seeds: List[int] = field(default_factory=list)
    ccc_values: List[float] = field(default_factory=list)
    untrained_values: List[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.ccc_values))

    @property
    def std(self) -> float:
        return float(np.std(self.ccc_values))

    @property
    def untrained_mean(self) -> float:
        return float(np.mean(self.untrained_values))

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload.update(mean=self.mean, std=self.std, untrained_mean=self.untrained_mean)
        return payload


def table_sweep(split: CorpusSplit, configs: Sequence[ModelConfig], config: Optional[TrainConfig] = None,
                seeds: Sequence[int] = (0,), partitions: Sequence[str] = ("val", "test"),
                clamp_negative: bool = False) -> List[SweepCell]:
    """
    Train every model config once per seed and score it on each partition.

    Each seed reseeds both the parameter init and the training shuffle. The
    untrained model of the same seed is scored alongside.

    Args:
        split: target-disjoint CorpusSplit
        configs: one ModelConfig per (kind, modality subset) row
        config: TrainConfig shared by every run; its seed is replaced per run
        seeds: seeds to pool per-clip CCC values over
        partitions: partitions to report, val and test by default

    Returns:
        List[SweepCell]: one cell per config and partition, in input order
    """
    config = config or TrainConfig()
    seen = sorted({c.target_id for c in split.train})
    cells = []
    for base in configs:
        row = {p: SweepCell(base.kind, base.modalities, p) for p in partitions}
        for seed in seeds:
            model = build_model(replace(base, seed=seed))
            untrained = {p: evaluate(model, split.partition(p).clips, p, clamp_negative=clamp_negative,
                                     train_targets=seen) for p in partitions}
            train(model, split, replace(config, seed=seed, clamp_ewe=clamp_negative))
            for p in partitions:
                report = evaluate(model, split.partition(p).clips, p, clamp_negative=clamp_negative,
                                  train_targets=seen)
                cell = row[p]
                cell.seeds.append(seed)
                cell.ccc_values.extend(report.ccc_values)
                cell.untrained_values.extend(untrained[p].ccc_values)
                log.info("%s(%s) seed %d: %s CCC %.4f (untrained %.4f)", base.kind, base.modalities, seed, p,
                         report.mean, untrained[p].mean)
        cells.extend(row[p] for p in partitions)
    return cells

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from attend_affect.config import (
    CLIP_DURATION_MEAN, CLIP_DURATION_MIN, CLIP_DURATION_STD, CLIPS_PER_TARGET, FEATURE_NOISE,
    LATENT_REVERSION, LATENT_SMOOTHNESS, LATENT_STEP, N_TARGETS, OBSERVER_LAG, OBSERVER_NOISE,
    OBSERVERS_PER_CLIP, FULL_FEATURE_DIMS, PARTITIONS, RATING_PERIOD, SPLIT_RATIOS, SYNTH_FEATURE_DIMS,
    SYNTH_PERIODS, WORD_JITTER,
)
from attend_affect.core.metrics import RatingSeries
from attend_affect.core.windowing import Modality, ModalityStream, resample_ratings
from attend_affect.errors import ConfigurationError, CorpusParseError, DataValidationError

log = logging.getLogger(__name__)

LATENT_PERIOD = 0.1
STREAM_FILES = {Modality.VISUAL: "visual.csv", Modality.ACOUSTIC: "acoustic.csv", Modality.LINGUISTIC: "linguistic.csv"}
MODALITY_INDEX = {Modality.VISUAL: 0, Modality.ACOUSTIC: 1, Modality.LINGUISTIC: 2}


@dataclass
class NarrativeClip:
    """One narrative: a target's video with its feature streams and observer traces."""
    clip_id: str
    target_id: str
    duration: float
    streams: Dict[Modality, ModalityStream]
    ratings: List[RatingSeries]


@dataclass
class Corpus:
    """
    Ordered collection of clips plus the per-modality dims and sampling periods.

    `synthetic` marks generator provenance; `generator` keeps the SynthConfig
    that produced it.
    """
    clips: List[NarrativeClip]
    dims: Dict[str, int]
    periods: Dict[str, float]
    synthetic: bool = False
    generator: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.clips)

    def __iter__(self) -> Iterator[NarrativeClip]:
        return iter(self.clips)

    def targets(self) -> List[str]:
        return sorted({clip.target_id for clip in self.clips})

    def clip(self, clip_id: str) -> NarrativeClip:
        for clip in self.clips:
            if clip.clip_id == clip_id:
                return clip
        raise DataValidationError(f"no clip {clip_id!r} in corpus")

    def subset(self, targets: Sequence[str]) -> "Corpus":
        chosen = set(targets)
        return Corpus([c for c in self.clips if c.target_id in chosen], dict(self.dims), dict(self.periods),
                      self.synthetic, dict(self.generator))


@dataclass
class SynthConfig:
    """
    Parameters of the synthetic narrative generator.

    Latent valence is a leaky random walk at 0.1 s, smoothed by a moving
    average of `latent_smoothness` steps and clipped to [-1, 1]. Each modality
    emits a fixed random linear map of the latent plus Gaussian noise at its
    own rate; observers see the latent `observer_lag` seconds late plus noise.
    """
    n_targets: int = N_TARGETS
    clips_per_target: int = CLIPS_PER_TARGET
    duration_mean: float = CLIP_DURATION_MEAN
    duration_std: float = CLIP_DURATION_STD
    duration_min: float = CLIP_DURATION_MIN
    dims: Dict[str, int] = field(default_factory=lambda: dict(SYNTH_FEATURE_DIMS))
    periods: Dict[str, float] = field(default_factory=lambda: dict(SYNTH_PERIODS))
    word_jitter: float = WORD_JITTER
    observers: int = OBSERVERS_PER_CLIP
    observer_noise: float = OBSERVER_NOISE
    observer_lag: float = OBSERVER_LAG
    latent_step: float = LATENT_STEP
    latent_reversion: float = LATENT_REVERSION
    latent_smoothness: int = LATENT_SMOOTHNESS
    feature_noise: float = FEATURE_NOISE
    nonlinear: bool = False
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.n_targets < 1 or self.clips_per_target < 1:
            raise ConfigurationError("n_targets and clips_per_target must be >= 1")
        if self.observers < 2:
            raise ConfigurationError(f"at least 2 observers per clip are required, got {self.observers}")
        if self.duration_mean <= 0 or self.duration_min <= 0:
            raise ConfigurationError("clip durations must be positive")
        for key, period in self.periods.items():
            if period <= 0:
                raise ConfigurationError(f"sampling period for {key} must be positive")
        for key, dim in self.dims.items():
            if dim < 1:
                raise ConfigurationError(f"feature dim for {key} must be >= 1")
        if min(self.observer_noise, self.observer_lag, self.feature_noise, self.latent_step, self.word_jitter) < 0:
            raise ConfigurationError("noise, lag, step and jitter must be non-negative")
        if not 0.0 <= self.latent_reversion < 1.0:
            raise ConfigurationError("latent_reversion must lie in [0, 1)")
        if self.latent_smoothness < 1:
            raise ConfigurationError("latent_smoothness must be >= 1")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be non-negative, got {self.seed}")

    @classmethod
    def full_scale(cls, **overrides) -> "SynthConfig":
        return cls(dims=dict(FULL_FEATURE_DIMS), **overrides)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ConfigurationError(f"unknown synth config keys: {unknown}")
        return cls(**dict(payload))


# ---------------------
# Generation
# ---------------------
def _latent_trace(config: SynthConfig, rng: np.random.Generator, steps: int) -> np.ndarray:
    walk = np.empty(steps)
    value = 0.0
    noise = rng.normal(0.0, config.latent_step, steps)
    for i in range(steps):
        value = (1.0 - config.latent_reversion) * value + noise[i]
        walk[i] = value
    width = config.latent_smoothness
    padded = np.concatenate([np.full(width - 1, walk[0]), walk])
    smoothed = np.convolve(padded, np.ones(width) / width, mode="valid")
    return np.clip(smoothed, -1.0, 1.0)


def _latent_at(latent: np.ndarray, times: np.ndarray) -> np.ndarray:
    index = np.clip(np.floor(np.asarray(times) / LATENT_PERIOD + 1e-9).astype(np.int64), 0, len(latent) - 1)
    return latent[index]


def _sample_times(modality: Modality, config: SynthConfig, duration: float, rng: np.random.Generator) -> np.ndarray:
    period = config.periods[modality.value]
    count = int(math.floor(duration / period + 1e-9))
    times = np.arange(count) * period
    if modality == Modality.LINGUISTIC and config.word_jitter > 0:
        times = times + rng.uniform(-config.word_jitter, config.word_jitter, count)
        times = np.sort(np.clip(times, 0.0, np.nextafter(duration, 0.0)))
    return np.round(times, 6)


def generate_synthetic(config: SynthConfig) -> Corpus:
    """
    Build a synthetic narrative corpus.

    Every random draw is keyed by (seed, clip index[, modality]) so a clip's
    streams do not depend on other clips and the same seed reproduces the
    corpus exactly.

    Returns:
        Corpus: n_targets * clips_per_target clips, flagged synthetic
    """
    config.validate()
    maps = {}
    for m in Modality:
        map_rng = np.random.default_rng([config.seed, 0, MODALITY_INDEX[m]])
        dim = int(config.dims[m.value])
        maps[m] = (map_rng.normal(0.0, 1.0, dim), map_rng.normal(0.0, 0.5, dim))

    clips = []
    for index in range(config.n_targets * config.clips_per_target):
        clip_rng = np.random.default_rng([config.seed, 1, index])
        duration = max(config.duration_min, config.duration_mean + config.duration_std * clip_rng.normal())
        duration = round(duration, 1)
        latent = _latent_trace(config, clip_rng, int(math.ceil(duration / LATENT_PERIOD)) + 1)

        streams = {}
        for m in Modality:
            stream_rng = np.random.default_rng([config.seed, 2, index, MODALITY_INDEX[m]])
            times = _sample_times(m, config, duration, stream_rng)
            signal = _latent_at(latent, times)
            if config.nonlinear:
                signal = np.tanh(2.0 * signal)
            weight, offset = maps[m]
            values = signal[:, None] * weight + offset
            values = values + stream_rng.normal(0.0, config.feature_noise, values.shape)
            streams[m] = ModalityStream(m, times, values, dim=int(config.dims[m.value]))

        n_ratings = int(math.floor(duration / RATING_PERIOD + 1e-9))
        rating_times = np.arange(n_ratings) * RATING_PERIOD
        ratings = []
        for j in range(config.observers):
            observer_rng = np.random.default_rng([config.seed, 3, index, j])
            seen = _latent_at(latent, np.maximum(rating_times - config.observer_lag, 0.0))
            noisy = seen + observer_rng.normal(0.0, config.observer_noise, n_ratings)
            ratings.append(RatingSeries(np.clip(noisy, -1.0, 1.0), RATING_PERIOD))

        clips.append(NarrativeClip(
            clip_id=f"clip{index:04d}", target_id=f"target{index % config.n_targets:03d}",
            duration=duration, streams=streams, ratings=ratings))

    log.info("generated %d synthetic clips over %d targets", len(clips), config.n_targets)
    return Corpus(clips, {k: int(v) for k, v in config.dims.items()},
                  {k: float(v) for k, v in config.periods.items()}, synthetic=True, generator=config.to_dict())


# ---------------------
# On-disk layout
# ---------------------
def _write_rows(path: Path, header: List[str], rows: Iterator[List[float]]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])


def save_corpus(corpus: Corpus, root: Union[str, Path]) -> Path:
    """
    Write `<root>/manifest.json`, per-clip modality CSVs and `ratings/obs_<n>.csv`.

    Floats are written with repr() so a reload reproduces them bit-exactly.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "synthetic": corpus.synthetic,
        "modalities": {k: {"dim": corpus.dims[k], "period": corpus.periods.get(k)} for k in sorted(corpus.dims)},
        "rating_period": RATING_PERIOD,
        "generator": corpus.generator,
        "clips": [],
    }
    for clip in corpus.clips:
        clip_dir = root / clip.clip_id
        (clip_dir / "ratings").mkdir(parents=True, exist_ok=True)
        for m, stream in clip.streams.items():
            header = ["timestamp"] + [f"f{i}" for i in range(stream.dim)]
            _write_rows(clip_dir / STREAM_FILES[m], header,
                        ([t, *v] for t, v in zip(stream.timestamps, stream.values)))
        for n, series in enumerate(clip.ratings):
            _write_rows(clip_dir / "ratings" / f"obs_{n}.csv", ["timestamp", "value"],
                        ([t, v] for t, v in zip(series.timestamps, series.values)))
        manifest["clips"].append({"clip_id": clip.clip_id, "target_id": clip.target_id, "duration": clip.duration,
                                  "modalities": [m.value for m in clip.streams], "observers": len(clip.ratings)})
    with open(root / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)
    log.info("wrote %d clips to %s", len(corpus.clips), root)
    return root


def _read_rows(path: Path, width: Optional[int]) -> Tuple[List[str], np.ndarray]:
    if not path.is_file():
        raise CorpusParseError(path, 0, "file is missing")
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header:
            raise CorpusParseError(path, 1, "missing header row")
        expected = width if width is not None else len(header)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != expected:
                raise CorpusParseError(path, line, f"expected {expected} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as err:
                raise CorpusParseError(path, line, f"non-numeric field ({err})") from None
    return header, np.array(rows, dtype=np.float64).reshape(len(rows), expected)


def _load_clip(root: Path, index: int, entry: Mapping[str, Any], dims: Mapping[str, int]) -> NarrativeClip:
    try:
        clip_id = str(entry["clip_id"])
        target_id = str(entry["target_id"])
        duration = float(entry["duration"])
        modalities = list(entry.get("modalities", list(dims)))
        observers = int(entry.get("observers", 0))
    except (KeyError, TypeError, ValueError, AttributeError) as err:
        raise CorpusParseError(root / "manifest.json", 0,
                               f"clip entry {index}: missing or malformed field {err}") from None
    clip_dir = root / clip_id
    if not clip_dir.is_dir():
        raise DataValidationError(f"manifest lists clip {clip_id!r} but {clip_dir} does not exist")
    streams = {}
    for key in modalities:
        m = Modality.parse(key)
        if m.value not in dims:
            raise CorpusParseError(root / "manifest.json", 0, f"clip {clip_id}: modality {m.value} has no declared dim")
        path = clip_dir / STREAM_FILES[m]
        _, table = _read_rows(path, int(dims[m.value]) + 1)
        try:
            streams[m] = ModalityStream(m, table[:, 0], table[:, 1:], dim=int(dims[m.value]))
        except DataValidationError as err:
            raise CorpusParseError(path, 0, str(err)) from None

    n_ratings = int(math.floor(duration / RATING_PERIOD + 1e-9))
    ratings = []
    for n in range(observers):
        path = clip_dir / "ratings" / f"obs_{n}.csv"
        _, table = _read_rows(path, 2)
        if len(table) == 0:
            raise CorpusParseError(path, 2, "rating file has no rows")
        outside = np.flatnonzero(np.abs(table[:, 1]) > 1.0)
        if len(outside):
            raise DataValidationError(f"{path}:{outside[0] + 2}: rating {table[outside[0], 1]} outside [-1, 1]")
        if np.any(np.diff(table[:, 0]) < 0):
            raise CorpusParseError(path, 0, "rating timestamps must be non-decreasing")
        series = RatingSeries(table[:, 1], RATING_PERIOD)
        on_grid = len(series) == n_ratings and np.allclose(table[:, 0], series.timestamps)
        if not on_grid:
            log.debug("%s: resampling %d ratings onto %d points", path, len(series), n_ratings)
            series = resample_ratings(table[:, 0], table[:, 1], RATING_PERIOD, n_ratings)
        ratings.append(series)
    return NarrativeClip(clip_id, target_id, duration, streams, ratings)


def load_corpus(root: Union[str, Path]) -> Corpus:
    """
    Parse a corpus directory written by save_corpus (or by hand in that layout).

    Raises:
        CorpusParseError: malformed manifest or CSV; names the file and line
        DataValidationError: missing clip directory, rating outside [-1, 1]
    """
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise CorpusParseError(manifest_path, 0, "manifest is missing")
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except json.JSONDecodeError as err:
        raise CorpusParseError(manifest_path, err.lineno, err.msg) from None
    try:
        dims = {k: int(v["dim"]) for k, v in manifest["modalities"].items()}
        periods = {k: v.get("period") for k, v in manifest["modalities"].items()}
        entries = manifest["clips"]
    except (KeyError, TypeError, AttributeError) as err:
        raise CorpusParseError(manifest_path, 0, f"missing manifest field {err}") from None
    clips = [_load_clip(root, index, entry, dims) for index, entry in enumerate(entries)]
    log.info("loaded %d clips from %s", len(clips), root)
    return Corpus(clips, dims, periods, synthetic=bool(manifest.get("synthetic", False)),
                  generator=dict(manifest.get("generator") or {}))


# ---------------------
# Splits
# ---------------------
@dataclass
class CorpusSplit:
    """
    Target-disjoint train/val/test partitions and the provenance that made them.
    """
    train: Corpus
    val: Corpus
    test: Corpus
    targets: Dict[str, List[str]]
    seed: int
    ratios: Tuple[float, float, float]

    def partition(self, name: str) -> Corpus:
        if name not in PARTITIONS:
            raise DataValidationError(f"unknown partition {name!r}; expected one of {PARTITIONS}")
        return getattr(self, name)

    def manifest(self) -> Dict[str, Any]:
        return {"seed": self.seed, "ratios": list(self.ratios), "targets": self.targets}


def partition_counts(n_targets: int, ratios: Sequence[float]) -> Tuple[int, int, int]:
    """Rounded target counts per partition; 49 targets at 60/20/20 -> (29, 10, 10)."""
    total = float(sum(ratios))
    val = max(1, int(round(n_targets * ratios[1] / total)))
    test = max(1, int(round(n_targets * ratios[2] / total)))
    return n_targets - val - test, val, test


def split_by_target(corpus: Corpus, ratios: Sequence[float] = SPLIT_RATIOS, seed: int = 0) -> CorpusSplit:
    """
    Shuffle targets by seed and deal them into train/val/test.

    All clips of a target travel together, so no target appears in two
    partitions.

    Raises:
        DataValidationError: fewer than 3 distinct targets
    """
    if len(ratios) != 3 or min(ratios) <= 0:
        raise ConfigurationError(f"split ratios must be three positive numbers, got {ratios}")
    targets = corpus.targets()
    if len(targets) < len(PARTITIONS):
        raise DataValidationError(f"need at least {len(PARTITIONS)} targets to split, got {len(targets)}")
    shuffled = [targets[i] for i in np.random.default_rng(seed).permutation(len(targets))]
    n_train, n_val, _ = partition_counts(len(targets), ratios)
    if n_train < 1:
        raise DataValidationError(f"{len(targets)} targets leave no training targets at ratios {ratios}")
    groups = {
        "train": sorted(shuffled[:n_train]),
        "val": sorted(shuffled[n_train:n_train + n_val]),
        "test": sorted(shuffled[n_train + n_val:]),
    }
    log.info("split %d targets into %d/%d/%d", len(targets), *(len(groups[p]) for p in PARTITIONS))
    return apply_split(corpus, groups, seed, tuple(float(r) for r in ratios))


def apply_split(corpus: Corpus, targets: Mapping[str, Sequence[str]], seed: int = 0,
                ratios: Tuple[float, float, float] = SPLIT_RATIOS) -> CorpusSplit:
    """Rebuild a CorpusSplit from partition target lists (e.g. a saved split manifest)."""
    groups = {p: list(targets.get(p, [])) for p in PARTITIONS}
    for i, a in enumerate(PARTITIONS):
        for b in PARTITIONS[i + 1:]:
            shared = set(groups[a]) & set(groups[b])
            if shared:
                raise DataValidationError(f"targets {sorted(shared)} appear in both {a} and {b}")
    return CorpusSplit(*(corpus.subset(groups[p]) for p in PARTITIONS), targets=groups, seed=seed,
                       ratios=tuple(ratios))


def write_split_manifest(split: CorpusSplit, path: Union[str, Path], config: Optional[Mapping[str, Any]] = None) -> Path:
    """Record the partition targets, seed and ratios (plus the effective config) as JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = dict(split.manifest())
    payload["clips"] = {p: [c.clip_id for c in split.partition(p)] for p in PARTITIONS}
    if config is not None:
        payload["config"] = dict(config)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
    return path


def read_split_manifest(path: Union[str, Path], corpus: Corpus) -> CorpusSplit:
    """Reapply a manifest written by write_split_manifest to a corpus."""
    path = Path(path)
    try:
        with open(path) as f:
            payload = json.load(f)
        targets = payload["targets"]
    except FileNotFoundError:
        raise DataValidationError(f"split manifest {path} does not exist") from None
    except json.JSONDecodeError as err:
        raise CorpusParseError(path, err.lineno, err.msg) from None
    except (KeyError, TypeError):
        raise CorpusParseError(path, 0, "manifest has no 'targets' section") from None
    known = set(corpus.targets())
    unknown = sorted({t for p in PARTITIONS for t in targets.get(p, [])} - known)
    if unknown:
        raise DataValidationError(f"split manifest names targets absent from the corpus: {unknown}")
    ratios = tuple(float(r) for r in payload.get("ratios", SPLIT_RATIOS))
    return apply_split(corpus, targets, int(payload.get("seed", 0)), ratios)

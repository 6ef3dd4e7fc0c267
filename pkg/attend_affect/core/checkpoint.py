import json
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np

from attend_affect.core.models import Model, ModelConfig, build_model
from attend_affect.errors import DataValidationError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
META_KEY = "__meta__"
PARAM_PREFIX = "param:"


def save_checkpoint(model: Model, path: Union[str, Path], history: Optional[Mapping[str, Any]] = None,
                    extra: Optional[Mapping[str, Any]] = None) -> Path:
    """
    Write every parameter plus the model config to a single .npz file.

    Parameters are stored under `param:<dotted name>` as float64 arrays, so a
    reload reproduces them bit-exactly. The config, training history and any
    extra provenance ride along as a JSON string under `__meta__`.

    Args:
        model: Model to save
        path: destination; the parent directory is created
        history: TrainHistory.to_dict() or similar
        extra: anything else worth keeping (train config, split seed, ...)

    Returns:
        Path: the path actually written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "history": dict(history or {}),
        "extra": dict(extra or {}),
    }
    arrays = {PARAM_PREFIX + name: value for name, value in model.state_dict().items()}
    arrays[META_KEY] = np.array(json.dumps(meta))
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    log.info("saved %s checkpoint with %d tensors to %s", model.config.kind, len(arrays) - 1, path)
    return path


def read_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Return (meta, parameter arrays) without building a model."""
    path = Path(path)
    if not path.is_file():
        raise DataValidationError(f"checkpoint {path} does not exist")
    try:
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(str(archive[META_KEY]))
            state = {key[len(PARAM_PREFIX):]: archive[key] for key in archive.files if key.startswith(PARAM_PREFIX)}
    except (KeyError, ValueError, OSError) as err:
        raise DataValidationError(f"{path} is not a readable checkpoint: {err}") from None
    if meta.get("format") != FORMAT_VERSION:
        raise DataValidationError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
    return meta, state


def load_checkpoint(path: Union[str, Path]) -> Tuple[Model, Dict[str, Any]]:
    """
    Rebuild the model from its stored config and load the saved parameters.

    Returns:
        (Model in eval mode, meta dict with "config", "history", "extra")

    Raises:
        DataValidationError: missing file, bad archive, parameter name mismatch
        DimensionError: a stored array has the wrong shape
    """
    meta, state = read_checkpoint(path)
    model = build_model(ModelConfig.from_dict(meta["config"]))
    model.load_state_dict(state)
    model.eval_mode()
    log.info("loaded %s(%s) from %s", model.config.kind, model.config.modalities, path)
    return model, meta

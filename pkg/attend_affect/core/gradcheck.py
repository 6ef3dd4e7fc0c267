import itertools
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from attend_affect.config import GRADCHECK_STEP, GRADCHECK_TOLERANCE
from attend_affect.core.models import FUSION_KINDS, Model, ModelConfig, ModelKind, build_model
from attend_affect.core.tensor_core import finite_diff_check, mse
from attend_affect.core.windowing import Modality
from attend_affect.errors import NumericError

log = logging.getLogger(__name__)

TOY_WINDOWS = 4
TOY_N_MAX = 3
TOY_FEATURE_DIMS = {"V": 3, "A": 2, "L": 3}
TOY_COMPONENTS = 4


@dataclass
class GradcheckResult:
    kind: str
    modalities: str
    seed: int
    max_error: float

    @property
    def passed(self) -> bool:
        return self.max_error <= GRADCHECK_TOLERANCE


def legal_subsets(kind) -> List[str]:
    """Every modality subset a model kind accepts: 7 for single-stream kinds, 4 for memory fusion."""
    kind = ModelKind.parse(kind)
    minimum = 2 if kind in FUSION_KINDS else 1
    subsets = []
    for size in range(minimum, len(Modality) + 1):
        for combo in itertools.combinations(Modality, size):
            subsets.append("".join(m.value for m in combo))
    return subsets


def toy_config(kind, modalities: str, seed: int = 0) -> ModelConfig:
    """A tiny configuration of `kind` whose every parameter can be checked numerically."""
    return ModelConfig(
        kind=ModelKind.parse(kind).value, modalities=modalities,
        feature_dims=dict(TOY_FEATURE_DIMS), embed_dims={"V": 4, "A": 4, "L": 4},
        decoder_hidden=4, d_mem=4, mfn_hidden=4, n_heads=2, n_blocks=1, ffn_multiplier=2,
        n_max={"V": TOY_N_MAX, "A": TOY_N_MAX, "L": TOY_N_MAX}, seed=seed)


def toy_windows(config: ModelConfig, count: int = TOY_WINDOWS, seed: int = 0) -> Dict[Modality, np.ndarray]:
    """Random stacked windows for every configured modality, coarse where the window is wider."""
    rng = np.random.default_rng([seed, 17])
    windows = {}
    for m in config.modality_set:
        factor = int(round(config.window_seconds[m.value] / config.common_window))
        coarse = -(-count // factor)
        windows[m] = rng.normal(0.0, 1.0, (coarse, int(config.feature_dims[m.value]), TOY_N_MAX))
    return windows


def gradcheck_model(config: ModelConfig, seed: int = 0, max_components: Optional[int] = TOY_COMPONENTS,
                    step: float = GRADCHECK_STEP) -> GradcheckResult:
    """
    Check every parameter tensor of one model against central differences.

    Dropout is off (eval mode); the loss is the MSE to a fixed random target.
    """
    model: Model = build_model(config)
    model.eval_mode()
    windows = toy_windows(config, seed=seed)
    target = np.random.default_rng([seed, 23]).uniform(-1.0, 1.0, TOY_WINDOWS)
    error = finite_diff_check(lambda: mse(model.forward(windows, TOY_WINDOWS), target), model.parameters(),
                              h=step, max_components=max_components, seed=seed)
    result = GradcheckResult(config.kind, config.modalities, seed, error)
    log.info("gradcheck %s(%s) seed %d: max relative error %.2e", config.kind, config.modalities, seed, error)
    return result


def run_gradcheck_suite(seeds: Iterable[int] = (0,), kinds: Optional[Sequence] = None,
                        max_components: Optional[int] = TOY_COMPONENTS) -> List[GradcheckResult]:
    """
    Gradcheck every model kind on every legal modality subset for each seed.

    Raises:
        NumericError: any result exceeds the tolerance; the message lists them all
    """
    results = []
    for seed in seeds:
        for kind in kinds or list(ModelKind):
            for modalities in legal_subsets(kind):
                results.append(gradcheck_model(toy_config(kind, modalities, seed), seed, max_components))
    failures = [r for r in results if not r.passed]
    if failures:
        listed = ", ".join(f"{r.kind}({r.modalities}) seed {r.seed}: {r.max_error:.2e}" for r in failures)
        raise NumericError(f"gradient check exceeded {GRADCHECK_TOLERANCE} for {listed}")
    return results


def summarize(results: Sequence[GradcheckResult]) -> List[Tuple[str, str, int, float, bool]]:
    return [(r.kind, r.modalities, r.seed, r.max_error, r.passed) for r in results]

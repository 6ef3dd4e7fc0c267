from .tensor_core import Tensor, RngState, backward, finite_diff_check, no_grad
from .windowing import Modality, ModalityStream, WindowPlan, build_plan, compute_n_max, stack_window
from .metrics import EvalReport, RatingSeries, ccc, ewe, human_benchmark, top_changes
from .models import Model, ModelConfig, ModelKind, build_model, predict_clip
from .dataset import Corpus, CorpusSplit, NarrativeClip, SynthConfig, generate_synthetic, load_corpus, save_corpus, split_by_target
from .checkpoint import load_checkpoint, save_checkpoint
from .trainer import TrainConfig, TrainHistory, evaluate, train
from .gradcheck import run_gradcheck_suite

__all__ = [
    "Tensor",
    "RngState",
    "backward",
    "finite_diff_check",
    "no_grad",
    "Modality",
    "ModalityStream",
    "WindowPlan",
    "build_plan",
    "compute_n_max",
    "stack_window",
    "EvalReport",
    "RatingSeries",
    "ccc",
    "ewe",
    "human_benchmark",
    "top_changes",
    "Model",
    "ModelConfig",
    "ModelKind",
    "build_model",
    "predict_clip",
    "Corpus",
    "CorpusSplit",
    "NarrativeClip",
    "SynthConfig",
    "generate_synthetic",
    "load_corpus",
    "save_corpus",
    "split_by_target",
    "load_checkpoint",
    "save_checkpoint",
    "TrainConfig",
    "TrainHistory",
    "evaluate",
    "train",
    "run_gradcheck_suite"
]

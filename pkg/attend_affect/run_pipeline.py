# attend_affect/run_pipeline.py

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import yaml

from attend_affect.config import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, FULL_FEATURE_DIMS, SPLIT_RATIOS
from attend_affect.core.checkpoint import load_checkpoint
from attend_affect.core.dataset import (
    SynthConfig, generate_synthetic, load_corpus, read_split_manifest, save_corpus, split_by_target,
    write_split_manifest,
)
from attend_affect.core.gradcheck import TOY_COMPONENTS, legal_subsets, run_gradcheck_suite, summarize
from attend_affect.core.metrics import top_changes
from attend_affect.core.mfn import attention_by_modality
from attend_affect.core.models import FUSION_KINDS, ModelConfig, ModelKind, build_model, predict_clip
from attend_affect.core.trainer import TrainConfig, evaluate, human_report, table_sweep, train
from attend_affect.core.windowing import build_plan, parse_modalities
from attend_affect.errors import (
    AttendAffectError, ConfigurationError, DataValidationError, DimensionError, MetricError, NumericError, UsageError,
)
from attend_affect.report_template import (
    format_attention, format_gradcheck, format_human_table, format_predictions, format_report, format_table,
    format_top_changes, history_json, report_json, table_json,
)

log = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
CONFIG_SECTIONS = ("model", "train", "synth")


class PipelineArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage problems as UsageError instead of exiting."""

    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage().rstrip()}")


def _add_model_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--embed-dim", type=int, help="embedding dim d_m for every modality")
    parser.add_argument("--heads", type=int, dest="n_heads")
    parser.add_argument("--blocks", type=int, dest="n_blocks")
    parser.add_argument("--hidden", type=int, help="decoder, memory and MFN network hidden size")
    parser.add_argument("--gate", choices=["softmax", "sigmoid"])
    parser.add_argument("--positional", choices=["sinusoidal", "none"])
    parser.add_argument("--causal", action="store_true", default=None)
    parser.add_argument("--full-scale", action="store_true", help="embedding dims 256/256/300")


def _add_train_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--epochs", type=int, dest="max_epochs")
    parser.add_argument("--patience", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--clamp-ewe", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = PipelineArgumentParser(prog="attend_affect", description="Multimodal valence prediction pipeline.")
    parser.add_argument("--config", type=Path, help="YAML file with optional model/train/synth sections")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("-v", "--verbose", action="store_true", help="shorthand for --log-level INFO")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands.required = True

    synth = commands.add_parser("synth", help="generate a synthetic corpus")
    synth.add_argument("--out", type=Path, required=True)
    synth.add_argument("--targets", type=int, dest="n_targets")
    synth.add_argument("--clips-per-target", type=int)
    synth.add_argument("--observers", type=int)
    synth.add_argument("--duration", type=float, dest="duration_mean")
    synth.add_argument("--observer-noise", type=float)
    synth.add_argument("--nonlinear", action="store_true", default=None)
    synth.add_argument("--full-scale", action="store_true", help="full-size feature dims V 1000, A 88, L 300")
    synth.add_argument("--seed", type=int)

    split = commands.add_parser("split", help="write a target-disjoint train/val/test manifest")
    split.add_argument("--corpus", type=Path, required=True)
    split.add_argument("--out", type=Path, required=True)
    split.add_argument("--ratios", type=float, nargs=3, default=list(SPLIT_RATIOS))
    split.add_argument("--seed", type=int, default=0)

    trainer = commands.add_parser("train", help="train a model and save its checkpoint")
    trainer.add_argument("--corpus", type=Path, required=True)
    trainer.add_argument("--split", type=Path, required=True)
    trainer.add_argument("--out", type=Path, required=True, help="checkpoint path (.npz)")
    trainer.add_argument("--model", dest="kind")
    trainer.add_argument("--modalities")
    _add_model_arguments(trainer)
    _add_train_arguments(trainer)
    trainer.add_argument("--seed", type=int)

    evaluator = commands.add_parser("eval", help="score a checkpoint on a partition")
    evaluator.add_argument("--checkpoint", type=Path, required=True)
    evaluator.add_argument("--corpus", type=Path, required=True)
    evaluator.add_argument("--split", type=Path, required=True)
    evaluator.add_argument("--partition", choices=["val", "test"], default="test")
    evaluator.add_argument("--human", action="store_true", help="add the leave-one-out human benchmark column")
    evaluator.add_argument("--clamp-ewe", action="store_true")
    evaluator.add_argument("--out", type=Path, help="JSON report destination")

    predictor = commands.add_parser("predict", help="per-window predictions for one clip")
    predictor.add_argument("--checkpoint", type=Path, required=True)
    predictor.add_argument("--corpus", type=Path, required=True)
    predictor.add_argument("--clip", required=True)
    predictor.add_argument("--top-changes", type=int, metavar="K")
    predictor.add_argument("--attention", type=Path, metavar="FILE", help="CSV of per-window modality attention")
    predictor.add_argument("--out", type=Path, help="CSV destination (default: stdout)")

    checker = commands.add_parser("gradcheck", help="finite-difference check of every model kind")
    checker.add_argument("--seed", type=int, default=0)
    checker.add_argument("--n-seeds", type=int, default=1)
    checker.add_argument("--components", type=int, default=TOY_COMPONENTS,
                         help="components checked per parameter tensor")

    bench = commands.add_parser("bench-human", help="leave-one-out human agreement per clip")
    bench.add_argument("--corpus", type=Path, required=True)
    bench.add_argument("--split", type=Path)
    bench.add_argument("--partition", choices=["train", "val", "test"], default="test")
    bench.add_argument("--clamp-ewe", action="store_true")
    bench.add_argument("--out", type=Path, help="JSON report destination")

    table = commands.add_parser("table", help="mean ± std CCC per model kind and modality subset over seeds")
    table.add_argument("--corpus", type=Path, required=True)
    table.add_argument("--split", type=Path, required=True)
    table.add_argument("--models", nargs="+", metavar="KIND", help="model kinds (default: all five)")
    table.add_argument("--subsets", nargs="+", metavar="MODS", help="restrict to these modality subsets")
    table.add_argument("--seed", type=int, default=0, help="first seed")
    table.add_argument("--n-seeds", type=int, default=3)
    _add_model_arguments(table)
    _add_train_arguments(table)
    table.add_argument("--human", action="store_true", help="append the leave-one-out human rows")
    table.add_argument("--out", type=Path, help="JSON destination")
    return parser


# ---------------------
# Configuration
# ---------------------
def load_config_file(path: Optional[Path]) -> Dict[str, Dict[str, Any]]:
    """Read the YAML config; every top-level key must be one of model, train, synth."""
    if path is None:
        return {}
    if not path.is_file():
        raise DataValidationError(f"config file {path} does not exist")
    with open(path) as f:
        try:
            payload = yaml.safe_load(f) or {}
        except yaml.YAMLError as err:
            raise ConfigurationError(f"{path}: {err}") from None
    if not isinstance(payload, dict):
        raise ConfigurationError(f"{path}: expected a mapping with sections {CONFIG_SECTIONS}")
    unknown = sorted(set(payload) - set(CONFIG_SECTIONS))
    if unknown:
        raise ConfigurationError(f"{path}: unknown sections {unknown}")
    return {k: dict(v or {}) for k, v in payload.items()}


def _overrides(args: argparse.Namespace, names: Sequence[str]) -> Dict[str, Any]:
    return {name: getattr(args, name) for name in names if getattr(args, name, None) is not None}


def synth_config(args: argparse.Namespace, file_config: Mapping[str, Dict[str, Any]]) -> SynthConfig:
    values = dict(file_config.get("synth", {}))
    if args.full_scale:
        values["dims"] = dict(FULL_FEATURE_DIMS)
    values.update(_overrides(args, ["n_targets", "clips_per_target", "observers", "duration_mean",
                                    "observer_noise", "nonlinear", "seed"]))
    return SynthConfig.from_dict(values)


def model_config(args: argparse.Namespace, file_config: Mapping[str, Dict[str, Any]], corpus) -> ModelConfig:
    values = dict(file_config.get("model", {}))
    values.update(_overrides(args, ["kind", "modalities", "n_heads", "n_blocks", "gate", "positional", "causal",
                                    "seed"]))
    if args.full_scale:
        values["embed_dims"] = {"V": 256, "A": 256, "L": 300}
    if args.embed_dim is not None:
        values["embed_dims"] = {m: args.embed_dim for m in "VAL"}
    if args.hidden is not None:
        values.update(decoder_hidden=args.hidden, d_mem=args.hidden, mfn_hidden=args.hidden)
    values["feature_dims"] = dict(corpus.dims)
    return ModelConfig.from_dict(values)


def train_config(args: argparse.Namespace, file_config: Mapping[str, Dict[str, Any]]) -> TrainConfig:
    values = dict(file_config.get("train", {}))
    values.update(_overrides(args, ["max_epochs", "patience", "lr", "seed"]))
    if args.clamp_ewe:
        values["clamp_ewe"] = True
    return TrainConfig.from_dict(values)


def _write(path: Optional[Path], text: str) -> None:
    if path is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text if text.endswith("\n") else text + "\n")
    log.info("wrote %s", path)


# ---------------------
# Commands
# ---------------------
def cmd_synth(args, file_config) -> int:
    config = synth_config(args, file_config)
    corpus = generate_synthetic(config)
    save_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} clips over {len(corpus.targets())} targets to {args.out}")
    return EXIT_OK


def cmd_split(args, file_config) -> int:
    corpus = load_corpus(args.corpus)
    split = split_by_target(corpus, tuple(args.ratios), args.seed)
    write_split_manifest(split, args.out, {"corpus": str(args.corpus), "synth": corpus.generator})
    sizes = "/".join(str(len(split.targets[p])) for p in ("train", "val", "test"))
    print(f"split {len(corpus.targets())} targets {sizes} into {args.out}")
    return EXIT_OK


def cmd_train(args, file_config) -> int:
    corpus = load_corpus(args.corpus)
    split = read_split_manifest(args.split, corpus)
    config = model_config(args, file_config, corpus)
    # n_max over every partition, not just train
    plan = build_plan(corpus.clips, config.modality_set, config.window_seconds, config.common_window,
                      config.kernel_size)
    config.n_max = {m.value: n for m, n in plan.n_max.items()}
    settings = train_config(args, file_config)
    model = build_model(config)
    history = train(model, split, settings, checkpoint_path=args.out)
    effective = {"model": config.to_dict(), "train": settings.to_dict(), "split": split.manifest()}
    sidecar = args.out.with_suffix(".history.json")
    _write(sidecar, history_json(history.to_dict(), effective))
    print(f"best epoch {history.best_epoch} with val CCC {history.best_val_ccc:.4f}; checkpoint {args.out}")
    return EXIT_OK


def cmd_eval(args, file_config) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus)
    split = read_split_manifest(args.split, corpus)
    extra = meta.get("extra", {})
    effective = {"model": meta["config"], "train": extra.get("train", {}),
                 "split": split.manifest(), "eval": {"partition": args.partition, "clamp_ewe": args.clamp_ewe}}
    report = evaluate(model, split.partition(args.partition).clips, args.partition, human=args.human,
                      clamp_negative=args.clamp_ewe, config=effective, synthetic=corpus.synthetic,
                      train_targets=extra.get("train_targets"))
    print(format_report(report))
    if args.out is not None:
        _write(args.out, report_json(report))
    return EXIT_OK


def cmd_predict(args, file_config) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    corpus = load_corpus(args.corpus)
    clip = corpus.clip(args.clip)
    if args.attention is not None and model.kind not in FUSION_KINDS:
        raise ConfigurationError(f"--attention needs a memory fusion model, got {model.kind.value}")
    attention: Optional[Dict[str, list]] = {} if args.attention is not None else None
    prediction = predict_clip(model, clip, attention)
    effective = {"model": meta["config"], "predict": {"clip": args.clip}}
    text = format_predictions(prediction, effective)
    if args.top_changes is not None:
        text += "\n" + format_top_changes(top_changes(prediction, args.top_changes), prediction.period)
    _write(args.out, text)
    if args.attention is not None:
        shares = [attention_by_modality(a, model.mfn) for a in attention.get("memory", [])]
        _write(args.attention, format_attention(shares, model.mfn.order, prediction.period, effective))
    return EXIT_OK


def cmd_gradcheck(args, file_config) -> int:
    if args.n_seeds < 1:
        raise UsageError("--n-seeds must be >= 1")
    seeds = range(args.seed, args.seed + args.n_seeds)
    results = run_gradcheck_suite(seeds, max_components=args.components)
    print(format_gradcheck(summarize(results)))
    print(f"max relative error {max(r.max_error for r in results):.3e} over {len(results)} checks")
    return EXIT_OK


def cmd_bench_human(args, file_config) -> int:
    corpus = load_corpus(args.corpus)
    clips = corpus.clips
    if args.split is not None:
        clips = read_split_manifest(args.split, corpus).partition(args.partition).clips
    report = human_report(clips, args.partition if args.split else "all", args.clamp_ewe, corpus.synthetic)
    print(format_human_table(report.clip_ids, report.ccc_values, report.mean, report.std), end="")
    if args.out is not None:
        report.config = {"bench": {"clamp_ewe": args.clamp_ewe, "partition": report.split}}
        _write(args.out, report_json(report))
    return EXIT_OK


def cmd_table(args, file_config) -> int:
    if args.n_seeds < 1:
        raise UsageError("--n-seeds must be >= 1")
    corpus = load_corpus(args.corpus)
    split = read_split_manifest(args.split, corpus)
    base = model_config(args, file_config, corpus)
    wanted = None if args.subsets is None else {"".join(m.value for m in parse_modalities(s)) for s in args.subsets}
    configs = []
    for kind in args.models or [k.value for k in ModelKind]:
        for subset in legal_subsets(kind):
            if wanted is None or subset in wanted:
                configs.append(replace(base, kind=ModelKind.parse(kind).value, modalities=subset))
    if not configs:
        raise UsageError("no legal (model, subset) combination was selected")
    used = parse_modalities("".join(c.modalities for c in configs))
    plan = build_plan(corpus.clips, used, base.window_seconds, base.common_window, base.kernel_size)
    n_max = {m.value: n for m, n in plan.n_max.items()}
    configs = [replace(c, n_max=dict(n_max)) for c in configs]

    settings = train_config(args, file_config)
    seeds = list(range(args.seed, args.seed + args.n_seeds))
    cells = table_sweep(split, configs, settings, seeds, clamp_negative=settings.clamp_ewe)
    human = [human_report(split.partition(p).clips, p, settings.clamp_ewe, corpus.synthetic)
             for p in ("val", "test")] if args.human else []
    print(format_table(cells, human))
    if args.out is not None:
        effective = {"model": base.to_dict(), "train": settings.to_dict(), "split": split.manifest(), "seeds": seeds}
        _write(args.out, table_json(cells, human, effective))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "bench-human": cmd_bench_human,
    "table": cmd_table,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one pipeline command.

    Returns:
        int: 0 success, 1 usage error, 2 data or configuration error, 3 numeric failure
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        level = "INFO" if args.verbose and args.log_level == "WARNING" else args.log_level
        logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT)
        file_config = load_config_file(args.config)
        return COMMANDS[args.command](args, file_config)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataValidationError, ConfigurationError, DimensionError, MetricError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except AttendAffectError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except SystemExit as exit_:
        return int(exit_.code or 0)


if __name__ == "__main__":
    sys.exit(main())

# attend_affect/report_template.py

import json
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import yaml

from attend_affect.core.metrics import EvalReport, RatingSeries
from attend_affect.core.trainer import SweepCell
from attend_affect.core.windowing import Modality


def config_header(config: Mapping[str, Any]) -> List[str]:
    """
    Effective configuration as `#`-prefixed YAML lines for the top of a CSV file.

    Example:
        {"seed": 7} -> ["# seed: 7"]
    """
    text = yaml.safe_dump(_plain(config), sort_keys=True, default_flow_style=False)
    return [f"# {line}" for line in text.rstrip("\n").splitlines()]


def _plain(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(getattr(k, "value", k)): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def format_report(report: EvalReport) -> str:
    """
    Human-readable evaluation report: one line per clip, then mean ± std.

    Example:
        MFT(VAL) on test (synthetic corpus)
        clip0001  CCC  0.5123
        ...
        mean CCC 0.4400 ± 0.3100 over 10 clips
    """
    provenance = " (synthetic corpus)" if report.synthetic else ""
    lines = [f"{report.model}({report.modalities}) on {report.split}{provenance}"]
    width = max(len(c) for c in report.clip_ids)
    for i, (clip_id, value) in enumerate(zip(report.clip_ids, report.ccc_values)):
        row = f"{clip_id:<{width}}  CCC {value: .4f}"
        if report.human_values is not None:
            row += f"  human {report.human_values[i]: .4f}"
        lines.append(row)
    lines.append(f"mean CCC {report.mean:.4f} ± {report.std:.4f} over {len(report.ccc_values)} clips")
    if report.human_values is not None:
        lines.append(f"human    {report.human_mean:.4f} ± {report.human_std:.4f}")
    if report.ewe_fallbacks:
        lines.append(f"EWE fell back to the unweighted mean on {report.ewe_fallbacks} clip(s)")
    return "\n".join(lines)


def report_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), indent=2)


def format_predictions(prediction: RatingSeries, config: Optional[Mapping[str, Any]] = None) -> str:
    """
    Per-window CSV `window,start_s,value`, preceded by the config header.

    Example:
        window,start_s,value
        0,0.0,0.125
        1,1.0,0.2
    """
    lines = config_header(config) if config else []
    lines.append("window,start_s,value")
    for i, value in enumerate(prediction.values):
        lines.append(f"{i},{i * prediction.period!r},{float(value)!r}")
    return "\n".join(lines) + "\n"


def format_top_changes(changes: Sequence[Tuple[int, float]], period: float = 1.0) -> str:
    """
    Ranked table of the largest window-to-window valence changes.

    Example:
        rank,window,start_s,delta
        1,2,2.0,-0.5
    """
    lines = ["rank,window,start_s,delta"]
    for rank, (window, delta) in enumerate(changes, start=1):
        lines.append(f"{rank},{window},{window * period!r},{delta!r}")
    return "\n".join(lines) + "\n"


def format_attention(shares: Sequence[Mapping[Modality, float]], order: Sequence[Modality], period: float = 1.0,
                     config: Optional[Mapping[str, Any]] = None) -> str:
    """Per-window modality attention shares as CSV `window,start_s,<modality>...`."""
    lines = config_header(config) if config else []
    lines.append(",".join(["window", "start_s"] + [m.value for m in order]))
    for i, row in enumerate(shares):
        lines.append(",".join([str(i), repr(i * period)] + [repr(float(row[m])) for m in order]))
    return "\n".join(lines) + "\n"


def format_human_table(clip_ids: Sequence[str], values: Sequence[float], mean: float, std: float) -> str:
    """
    Leave-one-out human benchmark per clip plus the summary row.

    Example:
        clip_id,human_ccc
        clip0000,0.61
        mean,0.55
        std,0.04
    """
    lines = ["clip_id,human_ccc"]
    lines.extend(f"{cid},{float(v)!r}" for cid, v in zip(clip_ids, values))
    lines.append(f"mean,{mean!r}")
    lines.append(f"std,{std!r}")
    return "\n".join(lines) + "\n"


def format_gradcheck(rows: Sequence[Tuple[str, str, int, float, bool]]) -> str:
    """One line per (kind, modalities, seed) with its max relative error."""
    lines = [f"{'model':<9} {'mods':<4} {'seed':>4}  max rel err"]
    for kind, modalities, seed, error, passed in rows:
        lines.append(f"{kind:<9} {modalities:<4} {seed:>4}  {error:.3e}{'' if passed else '  FAIL'}")
    return "\n".join(lines)


def history_json(history: Mapping[str, Any], config: Optional[Mapping[str, Any]] = None) -> str:
    payload: Dict[str, Any] = dict(history)
    if config is not None:
        payload["config"] = dict(config)
    return json.dumps(payload, indent=2)


def format_table(cells: Sequence[SweepCell], human: Sequence[EvalReport] = ()) -> str:
    """
    Mean ± std CCC per model kind, modality subset and partition, human rows last.

    Example:
        model     mods  split  mean CCC ± std    untrained  seeds
        MFT       VAL   test   0.4400 ± 0.3100     0.0120  0,1,2
        HUMAN           test   0.5000 ± 0.1200
    """
    lines = [f"{'model':<9} {'mods':<4}  {'split':<5}  {'mean CCC ± std':<16}  {'untrained':>9}  seeds"]
    for cell in cells:
        seeds = ",".join(str(s) for s in cell.seeds)
        lines.append(f"{cell.kind:<9} {cell.modalities:<4}  {cell.partition:<5}  "
                     f"{cell.mean:.4f} ± {cell.std:.4f}  {cell.untrained_mean:>9.4f}  {seeds}")
    for report in human:
        lines.append(f"{'HUMAN':<9} {'':<4}  {report.split:<5}  {report.mean:.4f} ± {report.std:.4f}")
    return "\n".join(lines)


def table_json(cells: Sequence[SweepCell], human: Sequence[EvalReport] = (),
               config: Optional[Mapping[str, Any]] = None) -> str:
    payload: Dict[str, Any] = {
        "cells": [cell.to_dict() for cell in cells],
        "human": {r.split: {"mean": r.mean, "std": r.std, "values": list(r.ccc_values)} for r in human},
    }
    if config is not None:
        payload["config"] = _plain(config)
    return json.dumps(payload, indent=2)

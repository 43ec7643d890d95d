"""Corpus evaluation over directories of ``<name>.gt.lcpl`` / ``<name>.pred.lcpl`` pairs.

Counts are pooled over all frames before any ratio is taken.  Frames load in
parallel but are merged in filename order, so the result never depends on
scheduling.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError
from .formats import read_labels
from .metrics import ClassTable, MetricReport, PanopticAccumulator, evaluate

GT_SUFFIX = ".gt.lcpl"
PRED_SUFFIX = ".pred.lcpl"


class EmptyCorpusError(ValueError):
    """The directory holds no evaluable frame."""


@dataclass
class CorpusResult:
    report: MetricReport
    frames: list[str]
    per_frame: dict = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)


def find_pairs(directory) -> list[tuple[str, Path, Path | None]]:
    """Sorted (name, gt path, pred path or None) triples."""
    d = Path(directory)
    if not d.is_dir():
        raise EmptyCorpusError(f"{d} is not a directory")
    out = []
    for gt in sorted(d.glob(f"*{GT_SUFFIX}")):
        name = gt.name[: -len(GT_SUFFIX)]
        pred = d / f"{name}{PRED_SUFFIX}"
        out.append((name, gt, pred if pred.exists() else None))
    return out


def _load(pair):
    name, gt_path, pred_path = pair
    if pred_path is None:
        raise FormatError(f"{name}: missing prediction {name}{PRED_SUFFIX}")
    gt = read_labels(gt_path)
    pred = read_labels(pred_path)
    if len(gt) != len(pred):
        raise FormatError(f"{name}: ground truth has {len(gt)} points, prediction {len(pred)}")
    return gt, pred


def _try_load(pair):
    try:
        return _load(pair), None
    except FormatError as exc:
        return None, str(exc)


def evaluate_corpus(directory, classes: ClassTable, per_frame: bool = False, workers: int = 4) -> CorpusResult:
    """Pooled report over every pair; malformed frames are listed in ``errors`` and skipped."""
    pairs = find_pairs(directory)
    if not pairs:
        raise EmptyCorpusError(f"no *{GT_SUFFIX} files in {directory}")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        loaded = list(pool.map(_try_load, pairs))
    acc = PanopticAccumulator(classes)
    frames, errors, breakdown = [], [], {}
    for (name, _, _), (data, err) in zip(pairs, loaded):
        if err is not None:
            errors.append(err)
            continue
        gt, pred = data
        acc.add(gt, pred)
        frames.append(name)
        if per_frame:
            breakdown[name] = evaluate(gt, pred, classes)
    return CorpusResult(acc.report(), frames, breakdown, errors)


def per_frame_csv(result: CorpusResult) -> str:
    keys = MetricReport.AGGREGATES
    lines = ["frame," + ",".join(keys)]
    for name in sorted(result.per_frame):
        d = result.per_frame[name].as_dict()
        lines.append(name + "," + ",".join(f"{d[k]:.6f}" for k in keys))
    return "\n".join(lines) + "\n"

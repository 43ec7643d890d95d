"""Panoptic quality (PQ, PQ-dagger, SQ, RQ, thing/stuff splits) and mIoU over points.

Segments are (class, instance id > 0) point sets for thing classes and
whole-class point sets for stuff classes.  A predicted and a ground-truth
segment of the same class match when their point IoU exceeds 0.5, which
makes the matching unique.  Points whose ground-truth class is flagged
``ignore`` are removed before anything is counted.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .postproc import PanopticLabeling

MATCH_IOU = 0.5


@dataclass(frozen=True)
class ClassInfo:
    name: str
    is_thing: bool
    ignore: bool = False


class ClassTable(dict):
    """Mapping class id -> :class:`ClassInfo`."""

    @property
    def things(self) -> list[int]:
        return sorted(c for c, i in self.items() if i.is_thing and not i.ignore)

    @property
    def stuff(self) -> list[int]:
        return sorted(c for c, i in self.items() if not i.is_thing and not i.ignore)

    @property
    def ignored(self) -> list[int]:
        return sorted(c for c, i in self.items() if i.ignore)

    @property
    def evaluated(self) -> list[int]:
        return sorted(self.things + self.stuff)

    def validate(self):
        if not self.things or not self.stuff:
            raise ValueError("class table needs at least one thing and one stuff class")
        return self

    @classmethod
    def from_json(cls, text: str) -> "ClassTable":
        raw = json.loads(text)
        rows = raw["classes"] if isinstance(raw, dict) else raw
        table = cls()
        for row in rows:
            cid = int(row["id"])
            if cid in table:
                raise ValueError(f"duplicate class id {cid}")
            table[cid] = ClassInfo(row["name"], bool(row.get("thing", False)), bool(row.get("ignore", False)))
        return table

    def to_json(self) -> str:
        rows = [
            {"id": c, "name": i.name, "thing": i.is_thing, "ignore": i.ignore}
            for c, i in sorted(self.items())
        ]
        return json.dumps({"classes": rows}, indent=2)


@dataclass
class ClassMatch:
    tp_ious: list = field(default_factory=list)
    fp: int = 0
    fn: int = 0

    @property
    def tp(self) -> int:
        return len(self.tp_ious)


def _segments(sem: np.ndarray, inst: np.ndarray, cls_id: int, is_thing: bool) -> np.ndarray:
    """Segment id per point for one class: -1 outside, else instance id (things) or 0 (stuff)."""
    in_cls = sem == cls_id
    if is_thing:
        return np.where(in_cls & (inst > 0), inst, -1)
    return np.where(in_cls, 0, -1)


def _drop_ignored(gt: PanopticLabeling, pred: PanopticLabeling, classes: ClassTable):
    if len(gt) != len(pred):
        raise DimensionError(f"ground truth has {len(gt)} points, prediction {len(pred)}")
    keep = ~np.isin(gt.semantic, classes.ignored)
    return gt.semantic[keep], gt.instance[keep], pred.semantic[keep], pred.instance[keep]


def match_segments(gt: PanopticLabeling, pred: PanopticLabeling, classes: ClassTable) -> dict[int, ClassMatch]:
    gs, gi, ps, pi = _drop_ignored(gt, pred, classes)
    out: dict[int, ClassMatch] = {}
    for c in classes.evaluated:
        thing = classes[c].is_thing
        g = _segments(gs, gi, c, thing)
        p = _segments(ps, pi, c, thing)
        g_ids, g_sizes = np.unique(g[g >= 0], return_counts=True)
        p_ids, p_sizes = np.unique(p[p >= 0], return_counts=True)
        both = (g >= 0) & (p >= 0)
        pairs, inter = np.unique(np.stack([g[both], p[both]], axis=1), axis=0, return_counts=True)
        g_size = dict(zip(g_ids.tolist(), g_sizes.tolist()))
        p_size = dict(zip(p_ids.tolist(), p_sizes.tolist()))
        m = ClassMatch()
        g_hit, p_hit = set(), set()
        for (a, b), n in zip(pairs.tolist(), inter.tolist()):
            iou = n / (g_size[a] + p_size[b] - n)
            if iou > MATCH_IOU:
                assert a not in g_hit and b not in p_hit, "IoU > 0.5 matching must be unique"
                g_hit.add(a)
                p_hit.add(b)
                m.tp_ious.append(iou)
        m.fn = len(g_ids) - len(g_hit)
        m.fp = len(p_ids) - len(p_hit)
        out[c] = m
    return out


def semantic_counts(gt_sem, pred_sem, classes: ClassTable):
    """Per-class (intersection, union) point counts, ignore points removed."""
    gt_sem = np.asarray(gt_sem, dtype=np.int64)
    pred_sem = np.asarray(pred_sem, dtype=np.int64)
    if gt_sem.shape != pred_sem.shape:
        raise DimensionError("semantic arrays differ in length")
    keep = ~np.isin(gt_sem, classes.ignored)
    gt_sem, pred_sem = gt_sem[keep], pred_sem[keep]
    inter, union = {}, {}
    for c in classes.evaluated:
        g = gt_sem == c
        p = pred_sem == c
        inter[c] = int((g & p).sum())
        union[c] = int((g | p).sum())
    return inter, union


def miou(gt_sem, pred_sem, classes: ClassTable):
    """Mean IoU over classes present in either labeling, plus the per-class IoUs."""
    inter, union = semantic_counts(gt_sem, pred_sem, classes)
    per_class = {c: inter[c] / union[c] for c in union if union[c] > 0}
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return mean, per_class


@dataclass
class MetricReport:
    per_class: dict
    pq: float
    pq_dagger: float
    sq: float
    rq: float
    pq_th: float
    sq_th: float
    rq_th: float
    pq_st: float
    sq_st: float
    rq_st: float
    miou: float

    AGGREGATES = ("pq", "pq_dagger", "sq", "rq", "pq_th", "sq_th", "rq_th", "pq_st", "sq_st", "rq_st", "miou")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.AGGREGATES}

    def to_keyvalue(self) -> str:
        lines = [f"{k} = {v:.9f}" for k, v in self.as_dict().items()]
        for c, row in sorted(self.per_class.items()):
            for k in ("pq", "sq", "rq", "iou"):
                lines.append(f"class.{c}.{k} = {row[k]:.9f}")
        return "\n".join(lines) + "\n"

    def to_table(self, classes: ClassTable | None = None) -> str:
        head = f"{'class':<20}{'PQ':>8}{'SQ':>8}{'RQ':>8}{'IoU':>8}{'TP':>6}{'FP':>6}{'FN':>6}"
        lines = [head, "-" * len(head)]
        for c, row in sorted(self.per_class.items()):
            name = classes[c].name if classes and c in classes else str(c)
            lines.append(
                f"{name:<20}{100 * row['pq']:8.2f}{100 * row['sq']:8.2f}{100 * row['rq']:8.2f}"
                f"{100 * row['iou']:8.2f}{row['tp']:6d}{row['fp']:6d}{row['fn']:6d}"
            )
        lines.append("-" * len(head))
        for k, v in self.as_dict().items():
            lines.append(f"{k:<20}{100 * v:8.2f}")
        return "\n".join(lines) + "\n"

    def to_csv(self, classes: ClassTable | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class_id", "name", "thing", "pq", "sq", "rq", "iou"])
        for c, row in sorted(self.per_class.items()):
            info = classes.get(c) if classes else None
            w.writerow([
                c,
                info.name if info else c,
                int(info.is_thing) if info else "",
                f"{row['pq']:.6f}",
                f"{row['sq']:.6f}",
                f"{row['rq']:.6f}",
                f"{row['iou']:.6f}",
            ])
        return buf.getvalue()


class PanopticAccumulator:
    """Pools TP/FP/FN and point counts over any number of frames."""

    def __init__(self, classes: ClassTable):
        self.classes = classes
        ev = classes.evaluated
        self.iou_sum = dict.fromkeys(ev, 0.0)
        self.tp = dict.fromkeys(ev, 0)
        self.fp = dict.fromkeys(ev, 0)
        self.fn = dict.fromkeys(ev, 0)
        self.inter = dict.fromkeys(ev, 0)
        self.union = dict.fromkeys(ev, 0)

    def add(self, gt: PanopticLabeling, pred: PanopticLabeling):
        for c, m in match_segments(gt, pred, self.classes).items():
            self.iou_sum[c] += float(sum(m.tp_ious))
            self.tp[c] += m.tp
            self.fp[c] += m.fp
            self.fn[c] += m.fn
        inter, union = semantic_counts(gt.semantic, pred.semantic, self.classes)
        for c in inter:
            self.inter[c] += inter[c]
            self.union[c] += union[c]
        return self

    def add_matches(self, matches: dict[int, ClassMatch]):
        for c, m in matches.items():
            self.iou_sum[c] += float(sum(m.tp_ious))
            self.tp[c] += m.tp
            self.fp[c] += m.fp
            self.fn[c] += m.fn
        return self

    def report(self) -> MetricReport:
        per_class = {}
        for c in self.classes.evaluated:
            tp, fp, fn = self.tp[c], self.fp[c], self.fn[c]
            seen = tp + fp + fn > 0 or self.union[c] > 0
            if not seen:
                continue
            denom = tp + 0.5 * fp + 0.5 * fn
            per_class[c] = {
                "pq": self.iou_sum[c] / denom if denom else 0.0,
                "sq": self.iou_sum[c] / tp if tp else 0.0,
                "rq": tp / denom if denom else 0.0,
                "iou": self.inter[c] / self.union[c] if self.union[c] else 0.0,
                "tp": tp,
                "fp": fp,
                "fn": fn,
            }

        segmented = {c for c, row in per_class.items() if row["tp"] + row["fp"] + row["fn"] > 0}

        def mean(key, ids):
            vals = [per_class[c][key] for c in ids if c in segmented]
            return float(np.mean(vals)) if vals else 0.0

        things = self.classes.things
        stuff = self.classes.stuff
        allc = self.classes.evaluated
        dagger = [
            per_class[c]["pq"] if self.classes[c].is_thing else per_class[c]["iou"]
            for c in allc
            if c in segmented
        ]
        return MetricReport(
            per_class=per_class,
            pq=mean("pq", allc),
            pq_dagger=float(np.mean(dagger)) if dagger else 0.0,
            sq=mean("sq", allc),
            rq=mean("rq", allc),
            pq_th=mean("pq", things),
            sq_th=mean("sq", things),
            rq_th=mean("rq", things),
            pq_st=mean("pq", stuff),
            sq_st=mean("sq", stuff),
            rq_st=mean("rq", stuff),
            miou=float(np.mean([per_class[c]["iou"] for c in allc if self.union[c] > 0]))
            if any(self.union[c] > 0 for c in allc)
            else 0.0,
        )


def panoptic_quality(matches: dict[int, ClassMatch], classes: ClassTable, semantic=None) -> MetricReport:
    """Report from segment matches; ``semantic`` is an optional (gt_sem, pred_sem) pair for IoU/mIoU."""
    acc = PanopticAccumulator(classes).add_matches(matches)
    if semantic is not None:
        inter, union = semantic_counts(*semantic, classes)
        acc.inter.update(inter)
        acc.union.update(union)
    return acc.report()


def evaluate(gt: PanopticLabeling, pred: PanopticLabeling, classes: ClassTable) -> MetricReport:
    return PanopticAccumulator(classes).add(gt, pred).report()

"""Segmentation and classification metrics over scene partitions.

A scene is matched by its end shot index (segmentation points); a joint
match additionally requires the category to agree.  Counts pool across
videos before any ratio is taken; micro aggregates pooled counts, macro
averages per-category precision/recall/F1 arithmetically (macro F1 is the
mean of per-category F1, not the F1 of macro P and R).  Every 0/0 ratio is
defined as 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .scheme import CategoryId, SceneAnnotation


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "PRF":
        p = _ratio(tp, tp + fp)
        r = _ratio(tp, tp + fn)
        return cls(p, r, _ratio(2 * p * r, p + r), tp, fp, fn)

    def to_doc(self) -> dict:
        return {
            "p": self.precision,
            "r": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
        }


@dataclass
class MatchCounts:
    """Pooled match counts, updatable video by video."""

    tp: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, tp: int, n_pred: int, n_gt: int) -> None:
        self.tp += tp
        self.fp += n_pred - tp
        self.fn += n_gt - tp

    def prf(self) -> PRF:
        return PRF.from_counts(self.tp, self.fp, self.fn)


def segmentation_points(scenes: list[SceneAnnotation]) -> list[int]:
    """End shot indices of the scenes, strictly increasing for a partition."""
    return [scene.end_shot for scene in scenes]


def _labeled_points(scenes: list[SceneAnnotation]) -> set[tuple[int, int | None]]:
    return {
        (s.end_shot, s.category.index if s.category is not None else None)
        for s in scenes
    }


def count_matches(
    pred: list[SceneAnnotation], gt: list[SceneAnnotation]
) -> tuple[int, int]:
    """(segmentation TPs, joint TPs) for one video.

    A predicted scene is a segmentation TP when some gold scene ends at the
    same shot, and a joint TP when that scene also carries the same category.
    """
    seg_tp = len(set(segmentation_points(pred)) & set(segmentation_points(gt)))
    joint_tp = len(_labeled_points(pred) & _labeled_points(gt))
    return seg_tp, joint_tp


@dataclass
class EvalReport:
    seg: PRF
    seg_cls_micro: PRF
    seg_cls_macro_precision: float
    seg_cls_macro_recall: float
    seg_cls_macro_f1: float
    per_category: dict[str, PRF] = field(default_factory=dict)
    n_videos: int = 0

    def to_doc(self) -> dict:
        return {
            "seg": self.seg.to_doc(),
            "seg_cls_micro": self.seg_cls_micro.to_doc(),
            "seg_cls_macro": {
                "p": self.seg_cls_macro_precision,
                "r": self.seg_cls_macro_recall,
                "f1": self.seg_cls_macro_f1,
            },
            "per_category": {name: prf.to_doc() for name, prf in self.per_category.items()},
        }


def evaluate(
    pairs: list[tuple[list[SceneAnnotation], list[SceneAnnotation]]],
    categories: list[CategoryId] | None = None,
) -> EvalReport:
    """Score (pred, gt) scene lists pooled over videos.

    The macro average runs over `categories` if given, otherwise over the
    categories appearing in any gold or predicted scene.  With no categories
    anywhere (pure segmentation), the joint metrics coincide with the
    segmentation ones and the macro block repeats the micro values.
    """
    seg = MatchCounts()
    joint = MatchCounts()
    per_cat: dict[int, MatchCounts] = {}
    names: dict[int, str] = {}
    if categories:
        for cat in categories:
            per_cat[cat.index] = MatchCounts()
            names[cat.index] = cat.name

    for pred, gt in pairs:
        if pred and gt and pred[-1].end_shot != gt[-1].end_shot:
            raise ValueError(
                "prediction and ground truth cover different shot ranges: "
                f"{pred[-1].end_shot} vs {gt[-1].end_shot}"
            )
        seg_tp, joint_tp = count_matches(pred, gt)
        seg.add(seg_tp, len(pred), len(gt))
        joint.add(joint_tp, len(pred), len(gt))

        by_cat_pred: dict[int, set[tuple[int, int | None]]] = {}
        by_cat_gt: dict[int, set[tuple[int, int | None]]] = {}
        for scenes, table in ((pred, by_cat_pred), (gt, by_cat_gt)):
            for s in scenes:
                if s.category is None:
                    continue
                if categories is None and s.category.index not in per_cat:
                    per_cat[s.category.index] = MatchCounts()
                    names[s.category.index] = s.category.name
                table.setdefault(s.category.index, set()).add(
                    (s.end_shot, s.category.index)
                )
        for idx, counts in per_cat.items():
            p = by_cat_pred.get(idx, set())
            g = by_cat_gt.get(idx, set())
            counts.add(len(p & g), len(p), len(g))

    micro = joint.prf()
    if per_cat:
        cat_prfs = [per_cat[idx].prf() for idx in sorted(per_cat)]
        macro_p = sum(x.precision for x in cat_prfs) / len(cat_prfs)
        macro_r = sum(x.recall for x in cat_prfs) / len(cat_prfs)
        macro_f = sum(x.f1 for x in cat_prfs) / len(cat_prfs)
    else:
        macro_p, macro_r, macro_f = micro.precision, micro.recall, micro.f1
    return EvalReport(
        seg=seg.prf(),
        seg_cls_micro=micro,
        seg_cls_macro_precision=macro_p,
        seg_cls_macro_recall=macro_r,
        seg_cls_macro_f1=macro_f,
        per_category={names[idx]: per_cat[idx].prf() for idx in sorted(per_cat)},
        n_videos=len(pairs),
    )

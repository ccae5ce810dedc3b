"""HOTA-family tracking metrics and ID-switch counting on mask tracks."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from vistrack.assignment import solve_assignment
from vistrack.masks import BinaryMask, mask_iou_matrix

__all__ = [
    "ALPHAS",
    "LabeledSequence",
    "AlphaScores",
    "MetricsReport",
    "match_frame",
    "evaluate",
    "evaluate_many",
]

ALPHAS = tuple(round(0.05 * k, 2) for k in range(1, 20))
IDS_ALPHA = 0.5


@dataclass
class LabeledSequence:
    """Per-frame ``(identity, mask)`` lists for one video."""

    frames: list[list[tuple[int, BinaryMask]]]
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        for t, frame in enumerate(self.frames):
            ids = [i for i, _ in frame]
            if len(ids) != len(set(ids)):
                raise ValueError(f"duplicate identity in frame {t}")
            for _, m in frame:
                if self.width is None:
                    self.width, self.height = m.width, m.height
                elif (m.width, m.height) != (self.width, self.height):
                    raise ValueError(f"mask dimensions differ in frame {t}")

    @property
    def n_frames(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class AlphaScores:
    alpha: float
    hota: float
    det_a: float
    ass_a: float
    det_re: float
    det_pr: float
    ass_re: float
    ass_pr: float
    loc_a: float


@dataclass(frozen=True)
class MetricsReport:
    hota: float
    det_a: float
    ass_a: float
    det_re: float
    det_pr: float
    ass_re: float
    ass_pr: float
    loc_a: float
    ids: int
    per_alpha: tuple[AlphaScores, ...] = field(default=())

    def to_json(self) -> dict:
        out = {k: getattr(self, k) for k in
               ("hota", "det_a", "ass_a", "det_re", "det_pr", "ass_re", "ass_pr", "loc_a", "ids")}
        out["per_alpha"] = [vars(a) for a in self.per_alpha]
        return out


def _ratio(num: float, den: float, both_empty: bool) -> float:
    if den > 0:
        return num / den
    return 1.0 if both_empty else 0.0


def _match_from_iou(iou: np.ndarray, alpha: float) -> list[tuple[int, int]]:
    if iou.size == 0:
        return []
    cost = np.where(iou >= alpha, -iou, np.inf)
    return list(solve_assignment(cost).pairs)


def match_frame(gt_masks: Sequence[BinaryMask], pred_masks: Sequence[BinaryMask], alpha: float):
    """Maximum-cardinality, maximum-IOU matching restricted to IOU >= alpha.

    Returns ``(gt_index, pred_index, iou)`` triples.
    """
    iou = mask_iou_matrix(gt_masks, pred_masks)
    return [(i, j, float(iou[i, j])) for i, j in _match_from_iou(iou, alpha)]


class _Counts:
    """Sufficient statistics for one alpha, poolable across sequences."""

    def __init__(self):
        self.tp = 0
        self.fn = 0
        self.fp = 0
        self.iou_sum = 0.0
        self.ass_sum = 0.0
        self.ass_re_sum = 0.0
        self.ass_pr_sum = 0.0

    def add_sequence(self, matches, gt_count: Counter, pred_count: Counter, n_gt: int, n_pred: int):
        pair_count = Counter((g, p) for g, p, _ in matches)
        tp = len(matches)
        self.tp += tp
        self.fn += n_gt - tp
        self.fp += n_pred - tp
        for g, p, iou in matches:
            tpa = pair_count[g, p]
            fna = gt_count[g] - tpa
            fpa = pred_count[p] - tpa
            self.iou_sum += iou
            self.ass_sum += tpa / (tpa + fna + fpa)
            self.ass_re_sum += tpa / (tpa + fna)
            self.ass_pr_sum += tpa / (tpa + fpa)

    def scores(self, alpha: float) -> AlphaScores:
        empty = self.tp + self.fn + self.fp == 0
        det_a = _ratio(self.tp, self.tp + self.fn + self.fp, empty)
        ass_a = _ratio(self.ass_sum, self.tp, empty)
        return AlphaScores(
            alpha=alpha,
            hota=float(np.sqrt(det_a * ass_a)),
            det_a=det_a,
            ass_a=ass_a,
            det_re=_ratio(self.tp, self.tp + self.fn, empty),
            det_pr=_ratio(self.tp, self.tp + self.fp, empty),
            ass_re=_ratio(self.ass_re_sum, self.tp, empty),
            ass_pr=_ratio(self.ass_pr_sum, self.tp, empty),
            loc_a=_ratio(self.iou_sum, self.tp, empty),
        )


def _accumulate(gt: LabeledSequence, pred: LabeledSequence, counts: dict[float, _Counts]) -> int:
    if gt.n_frames != pred.n_frames:
        raise ValueError(f"frame counts differ: gt {gt.n_frames} vs pred {pred.n_frames}")
    if None not in (gt.width, pred.width) and (gt.width, gt.height) != (pred.width, pred.height):
        raise ValueError("gt and pred image dimensions differ")

    gt_count = Counter(g for frame in gt.frames for g, _ in frame)
    pred_count = Counter(p for frame in pred.frames for p, _ in frame)
    n_gt = sum(gt_count.values())
    n_pred = sum(pred_count.values())

    matches: dict[float, list] = {a: [] for a in ALPHAS}
    last_pred: dict[int, int] = {}
    ids = 0
    for gframe, pframe in zip(gt.frames, pred.frames):
        if not gframe or not pframe:
            continue
        iou = mask_iou_matrix([m for _, m in gframe], [m for _, m in pframe])
        for alpha in ALPHAS:
            pairs = _match_from_iou(iou, alpha)
            matches[alpha].extend((gframe[i][0], pframe[j][0], float(iou[i, j])) for i, j in pairs)
            if alpha == IDS_ALPHA:
                for i, j in pairs:
                    g, p = gframe[i][0], pframe[j][0]
                    if g in last_pred and last_pred[g] != p:
                        ids += 1
                    last_pred[g] = p
    for alpha in ALPHAS:
        counts[alpha].add_sequence(matches[alpha], gt_count, pred_count, n_gt, n_pred)
    return ids


def evaluate_many(pairs: Sequence[tuple[LabeledSequence, LabeledSequence]]) -> MetricsReport:
    """Pool counts over several (gt, pred) sequences; identities are per sequence."""
    counts = {a: _Counts() for a in ALPHAS}
    ids = sum(_accumulate(gt, pred, counts) for gt, pred in pairs)
    per_alpha = tuple(counts[a].scores(a) for a in ALPHAS)

    def mean(name):
        return float(np.mean([getattr(s, name) for s in per_alpha]))

    return MetricsReport(
        hota=mean("hota"), det_a=mean("det_a"), ass_a=mean("ass_a"),
        det_re=mean("det_re"), det_pr=mean("det_pr"),
        ass_re=mean("ass_re"), ass_pr=mean("ass_pr"),
        loc_a=mean("loc_a"), ids=ids, per_alpha=per_alpha,
    )


def evaluate(gt: LabeledSequence, pred: LabeledSequence) -> MetricsReport:
    return evaluate_many([(gt, pred)])

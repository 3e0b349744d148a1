"""CLEAR-MOT evaluation: MOTA, MOTP, recall/precision/F1, FAR, MT/PT/ML, IDs, FM."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import EmptyGroundTruth
from .model import BBox, iou

MOSTLY_TRACKED = 0.8
MOSTLY_LOST = 0.2


@dataclass
class EvalFrame:
    ground_truth: Sequence[Tuple[int, BBox]] = field(default_factory=list)
    hypotheses: Sequence[Tuple[int, BBox]] = field(default_factory=list)

    def __post_init__(self):
        for side, name in ((self.ground_truth, "ground truth"), (self.hypotheses, "hypothesis")):
            ids = [i for i, _ in side]
            if len(ids) != len(set(ids)):
                raise ValueError(f"duplicate {name} ids in one frame: {ids}")


@dataclass
class FrameMatch:
    matches: Dict[int, int]  # gt id -> hyp id
    ious: Dict[int, float]  # gt id -> iou of its match
    fp: int
    fn: int


@dataclass
class MotReport:
    mota: float
    motp: float
    recall: float
    precision: float
    f1: float
    far: float
    mt: float
    pt: float
    ml: float
    id_switches: int
    fragmentations: int
    fp: int
    fn: int
    matches: int
    gt_total: int
    frames: int
    gt_tracks: int

    def as_dict(self) -> dict:
        return asdict(self)

    def to_key_value(self) -> str:
        out = []
        for k, v in self.as_dict().items():
            out.append(f"{k} = {v:.6f}\n" if isinstance(v, float) else f"{k} = {v}\n")
        return "".join(out)

    def to_table(self) -> str:
        cols = [
            ("MOTA", f"{100 * self.mota:.2f}"),
            ("MOTP", f"{100 * self.motp:.2f}"),
            ("Rcll", f"{100 * self.recall:.2f}"),
            ("Prcn", f"{100 * self.precision:.2f}"),
            ("F1", f"{100 * self.f1:.2f}"),
            ("FAR", f"{self.far:.2f}"),
            ("MT", f"{self.mt:.2f}"),
            ("PT", f"{self.pt:.2f}"),
            ("ML", f"{self.ml:.2f}"),
            ("IDs", str(self.id_switches)),
            ("FM", str(self.fragmentations)),
        ]
        widths = [max(len(h), len(v)) for h, v in cols]
        head = " │ ".join(h.rjust(w) for (h, _), w in zip(cols, widths))
        rule = "─┼─".join("─" * w for w in widths)
        body = " │ ".join(v.rjust(w) for (_, v), w in zip(cols, widths))
        return f"{head}\n{rule}\n{body}\n"


def match_frame(frame: EvalFrame, prev_matches: Mapping[int, int] | None = None, iou_min: float = 0.5) -> FrameMatch:
    """Match hypotheses to ground truth in one frame.

    Correspondences from the previous frame are kept while their IoU stays at
    or above ``iou_min``; the remaining objects are matched by Hungarian on
    (1 - IoU), pairs below ``iou_min`` being forbidden.
    """
    if not 0.0 < iou_min < 1.0:
        raise ValueError("iou_min must be in (0, 1)")
    gt = dict(frame.ground_truth)
    hyp = dict(frame.hypotheses)
    matches, ious = {}, {}
    for g, h in (prev_matches or {}).items():
        if g in gt and h in hyp and h not in matches.values():
            v = iou(gt[g], hyp[h])
            if v >= iou_min:
                matches[g] = h
                ious[g] = v
    free_g = [g for g, _ in frame.ground_truth if g not in matches]
    used_h = set(matches.values())
    free_h = [h for h, _ in frame.hypotheses if h not in used_h]
    if free_g and free_h:
        big = 1e6
        cost = np.full((len(free_g), len(free_h)), big)
        vals = np.zeros_like(cost)
        for i, g in enumerate(free_g):
            for j, h in enumerate(free_h):
                v = iou(gt[g], hyp[h])
                vals[i, j] = v
                if v >= iou_min:
                    cost[i, j] = 1.0 - v
        for i, j in zip(*linear_sum_assignment(cost)):
            if cost[i, j] < big:
                matches[free_g[i]] = free_h[j]
                ious[free_g[i]] = float(vals[i, j])
    return FrameMatch(matches, ious, fp=len(hyp) - len(matches), fn=len(gt) - len(matches))


def evaluate(frames: Sequence[EvalFrame], iou_min: float = 0.5) -> MotReport:
    fp = fn = idsw = frag = nmatch = gt_total = 0
    iou_sum = 0.0
    prev: Dict[int, int] = {}
    last_hyp: Dict[int, int] = {}  # gt id -> hyp id at its last matched frame
    tracked_before: Dict[int, bool] = {}
    lost_since: Dict[int, bool] = {}
    present = defaultdict(int)
    covered = defaultdict(int)
    for frame in frames:
        fm = match_frame(frame, prev, iou_min)
        fp += fm.fp
        fn += fm.fn
        nmatch += len(fm.matches)
        gt_total += len(frame.ground_truth)
        iou_sum += sum(fm.ious.values())
        for g, _ in frame.ground_truth:
            present[g] += 1
            if g in fm.matches:
                covered[g] += 1
                h = fm.matches[g]
                if g in last_hyp and last_hyp[g] != h:
                    idsw += 1
                if tracked_before.get(g) and lost_since.get(g):
                    frag += 1
                last_hyp[g] = h
                tracked_before[g] = True
                lost_since[g] = False
            elif tracked_before.get(g):
                lost_since[g] = True
        prev = fm.matches
    if gt_total == 0:
        raise EmptyGroundTruth("no ground-truth objects to evaluate against")
    recall = nmatch / gt_total
    precision = nmatch / (nmatch + fp) if nmatch + fp else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    ratios = [covered[g] / present[g] for g in present]
    mt = sum(r >= MOSTLY_TRACKED for r in ratios)
    ml = sum(r <= MOSTLY_LOST for r in ratios)
    pt = len(ratios) - mt - ml
    n = len(ratios)
    return MotReport(
        mota=1.0 - (fn + fp + idsw) / gt_total,
        motp=iou_sum / nmatch if nmatch else 0.0,
        recall=recall,
        precision=precision,
        f1=f1,
        far=100.0 * fp / len(frames),
        mt=100.0 * mt / n,
        pt=100.0 * pt / n,
        ml=100.0 * ml / n,
        id_switches=idsw,
        fragmentations=frag,
        fp=fp,
        fn=fn,
        matches=nmatch,
        gt_total=gt_total,
        frames=len(frames),
        gt_tracks=n,
    )


def frames_from_records(gt: Mapping[int, List[Tuple[int, BBox]]], hyp: Mapping[int, List[Tuple[int, BBox]]], num_frames: int | None = None) -> List[EvalFrame]:
    """Align per-frame ground truth and hypotheses into an ordered frame list."""
    keys = set(gt) | set(hyp)
    if num_frames is None:
        num_frames = (max(keys) + 1) if keys else 0
    return [EvalFrame(list(gt.get(k, [])), list(hyp.get(k, []))) for k in range(num_frames)]

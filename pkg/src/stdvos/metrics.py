"""Video object segmentation scores: region similarity J, boundary measure F, J&F."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .assignment import solve_assignment

RECALL_THRESHOLD = 0.5
TABLE_COLUMNS = ("J&F", "J-Mean", "J-Recall", "F-Mean", "F-Recall")


class DimensionError(ValueError):
    pass


@dataclass
class MaskSequence:
    """Masks of one object over a whole video; empty frames mean 'absent'."""

    obj_id: int
    masks: np.ndarray  # (T, H, W) bool

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=bool)
        if self.masks.ndim != 3:
            raise DimensionError(f"masks must be T x H x W, got {self.masks.shape}")

    @classmethod
    def from_entries(cls, obj_id: int, entries: Iterable[tuple[int, np.ndarray]], n_frames: int,
                     shape: tuple[int, int]) -> "MaskSequence":
        masks = np.zeros((n_frames, *shape), bool)
        seen = set()
        for t, m in entries:
            if t in seen:
                raise ValueError(f"object {obj_id}: two masks for frame {t}")
            seen.add(t)
            m = np.asarray(m, dtype=bool)
            if m.shape != tuple(shape):
                raise DimensionError(f"object {obj_id} frame {t}: mask {m.shape} != {shape}")
            masks[t] = m
        return cls(obj_id, masks)


def _check(pred: np.ndarray, gt: np.ndarray):
    pred, gt = np.asarray(pred, dtype=bool), np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise DimensionError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def region_j(pred, gt) -> float:
    pred, gt = _check(pred, gt)
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


_CROSS = ndimage.generate_binary_structure(2, 1)


def contour(mask: np.ndarray) -> np.ndarray:
    """8-connected inner boundary: foreground pixels with a 4-neighbour in the background.

    Pixels beyond the image border count as background.
    """
    mask = np.asarray(mask, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, structure=_CROSS, border_value=0)


def default_tolerance(height: int, width: int) -> int:
    return int(math.ceil(0.008 * math.hypot(height, width)))


def boundary_f(pred, gt, tol: float | None = None) -> float:
    pred, gt = _check(pred, gt)
    if tol is None:
        tol = default_tolerance(*gt.shape)
    if tol < 0:
        raise ValueError("tolerance must be >= 0")
    pred_c, gt_c = contour(pred), contour(gt)
    n_pred, n_gt = np.count_nonzero(pred_c), np.count_nonzero(gt_c)
    if n_pred == 0 and n_gt == 0:
        return 1.0
    if n_pred == 0 or n_gt == 0:
        return 0.0
    dist_to_gt = ndimage.distance_transform_edt(~gt_c)
    dist_to_pred = ndimage.distance_transform_edt(~pred_c)
    precision = np.count_nonzero(dist_to_gt[pred_c] <= tol) / n_pred
    recall = np.count_nonzero(dist_to_pred[gt_c] <= tol) / n_gt
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def per_frame_scores(pred: MaskSequence | None, gt: MaskSequence, tol) -> tuple[np.ndarray, np.ndarray]:
    """J and F over the frames where the GT object is present."""
    frames = np.flatnonzero(gt.masks.reshape(gt.masks.shape[0], -1).any(axis=1))
    if pred is None:
        return np.zeros(len(frames)), np.zeros(len(frames))
    if pred.masks.shape != gt.masks.shape:
        raise DimensionError(f"sequence shapes differ: {pred.masks.shape} vs {gt.masks.shape}")
    j = np.array([region_j(pred.masks[t], gt.masks[t]) for t in frames])
    f = np.array([boundary_f(pred.masks[t], gt.masks[t], tol) for t in frames])
    return j, f


def _pair_score(pred, gt, tol) -> float:
    j, f = per_frame_scores(pred, gt, tol)
    if j.size == 0:
        return 0.0
    return (j.mean() + f.mean()) / 2


def assign_tracks(preds: Sequence[MaskSequence], gts: Sequence[MaskSequence], tol=None,
                  scores: np.ndarray | None = None) -> dict[int, int]:
    """Map GT index -> prediction index maximizing the summed pair J&F."""
    if not preds or not gts:
        return {}
    if scores is None:
        tol = default_tolerance(*gts[0].masks.shape[1:]) if tol is None else tol
        scores = np.array([[_pair_score(p, g, tol) for p in preds] for g in gts])
    return dict(solve_assignment(scores, maximize=True))


@dataclass
class ObjectScore:
    video: str
    obj_id: int
    track_id: int | None
    j_mean: float
    j_recall: float
    f_mean: float
    f_recall: float


@dataclass
class EvalReport:
    j_mean: float
    j_recall: float
    f_mean: float
    f_recall: float
    objects: list[ObjectScore] = field(default_factory=list)

    @property
    def jf(self) -> float:
        return (self.j_mean + self.f_mean) / 2

    def row(self) -> dict:
        return {"J&F": self.jf, "J-Mean": self.j_mean, "J-Recall": self.j_recall,
                "F-Mean": self.f_mean, "F-Recall": self.f_recall}

    def to_dict(self) -> dict:
        return {**self.row(), "objects": [asdict(o) for o in self.objects]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TABLE_COLUMNS)
        writer.writerow([f"{self.row()[c]:.6f}" for c in TABLE_COLUMNS])
        return buf.getvalue()


def summarize(objects: list[ObjectScore]) -> EvalReport:
    if not objects:
        return EvalReport(0.0, 0.0, 0.0, 0.0, [])
    mean = lambda key: float(np.mean([getattr(o, key) for o in objects]))  # noqa: E731
    return EvalReport(mean("j_mean"), mean("j_recall"), mean("f_mean"), mean("f_recall"), objects)


def score_video(preds: Sequence[MaskSequence], gts: Sequence[MaskSequence], tol=None,
                video: str = "") -> list[ObjectScore]:
    if not gts:
        return []
    tol = default_tolerance(*gts[0].masks.shape[1:]) if tol is None else tol
    # per-frame scores for every pair, reused by the assignment and the report
    table = [[per_frame_scores(p, g, tol) for p in preds] for g in gts]
    scores = np.array([[(j.mean() + f.mean()) / 2 if j.size else 0.0 for j, f in row] for row in table])
    match = assign_tracks(preds, gts, scores=scores) if preds else {}
    out = []
    for gi, g in enumerate(gts):
        if gi in match:
            j, f = table[gi][match[gi]]
            track = preds[match[gi]].obj_id
        else:
            j, f = per_frame_scores(None, g, tol)
            track = None
        if j.size == 0:
            continue  # object never visible: nothing to score
        out.append(ObjectScore(video, g.obj_id, track, float(j.mean()),
                               float(np.mean(j > RECALL_THRESHOLD)), float(f.mean()),
                               float(np.mean(f > RECALL_THRESHOLD))))
    return out


def evaluate(preds: Sequence[MaskSequence], gts: Sequence[MaskSequence], tol=None) -> EvalReport:
    """Score one video. Unassigned GT objects contribute zeros."""
    return summarize(score_video(preds, gts, tol))


def evaluate_dataset(videos: Iterable[tuple[str, Sequence[MaskSequence], Sequence[MaskSequence]]],
                     tol=None) -> EvalReport:
    """Means over every GT object of every ``(name, preds, gts)`` video."""
    objects = []
    for name, preds, gts in videos:
        objects.extend(score_video(preds, gts, tol, name))
    return summarize(objects)

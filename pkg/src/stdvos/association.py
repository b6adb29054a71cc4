"""Online association of per-frame detections into trajectories.

Cost between a live track and a detection mixes box overlap and appearance::

    beta * (1 - IoU(track box, det box)) + (1 - beta) * (1 - cos(track emb, det emb))

The predicted box of a track is simply its last observed box, and its
appearance is an exponential moving average of matched ReID embeddings.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .assignment import solve_assignment
from .attention import ConfigError
from .geometry import Box, box_iou_xyxy, iou


class TrackState(str, Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    DEAD = "dead"


@dataclass(frozen=True)
class TrackerConfig:
    score_threshold: float = 0.2
    init_threshold: float = 0.4  # minimum score for a detection to start a new track
    nms_iou: float = 0.5  # duplicate detections above this overlap are dropped; 1 disables
    beta: float = 0.5
    max_cost: float = 0.8
    min_hits: int = 2
    max_age: int = 10
    momentum: float = 0.9

    def __post_init__(self):
        if not 0 <= self.score_threshold <= 1:
            raise ConfigError("score_threshold must lie in [0, 1]")
        if not 0 <= self.init_threshold <= 1 or not 0 < self.nms_iou <= 1:
            raise ConfigError("init_threshold must lie in [0, 1] and nms_iou in (0, 1]")
        if not 0 <= self.beta <= 1:
            raise ConfigError("beta must lie in [0, 1]")
        if not 0 <= self.max_cost <= 2:
            raise ConfigError("max_cost must lie in [0, 2]")
        if self.min_hits < 1 or self.max_age < 0:
            raise ConfigError("min_hits must be >= 1 and max_age >= 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")

    @classmethod
    def from_dict(cls, data: dict) -> "TrackerConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown tracker config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Track:
    id: int
    frames: list[int]
    boxes: list[Box]
    scores: list[float]
    embedding: np.ndarray
    hits: int = 1
    misses: int = 0
    state: TrackState = TrackState.TENTATIVE
    dropped: bool = False  # tentative track that aged out; never reported

    @property
    def last_frame(self) -> int:
        return self.frames[-1]

    def predicted_box(self) -> Box:
        return self.boxes[-1]


@dataclass(frozen=True)
class TrajectoryEntry:
    frame: int
    box: Box
    score: float


@dataclass
class Trajectory:
    id: int
    entries: list[TrajectoryEntry] = field(default_factory=list)

    def box_at(self, frame: int) -> Box | None:
        for e in self.entries:
            if e.frame == frame:
                return e.box
        return None

    def to_dict(self) -> dict:
        return {"id": self.id,
                "entries": [{"frame": e.frame, "box": e.box.to_list(), "score": e.score}
                            for e in self.entries]}

    @classmethod
    def from_dict(cls, data: dict) -> "Trajectory":
        return cls(int(data["id"]), [TrajectoryEntry(int(e["frame"]), Box.from_array(e["box"]),
                                                     float(e["score"])) for e in data["entries"]])


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def association_cost(tracks: Sequence[Track], boxes: np.ndarray, embeddings: np.ndarray,
                     beta: float) -> np.ndarray:
    if not tracks or len(boxes) == 0:
        return np.zeros((len(tracks), len(boxes)))
    t_boxes = np.array([t.predicted_box().corners() for t in tracks])
    overlap = box_iou_xyxy(t_boxes, boxes)
    t_emb = np.array([_unit(t.embedding) for t in tracks])
    d_emb = np.array([_unit(e) for e in embeddings])
    cos = np.clip(t_emb @ d_emb.T, -1.0, 1.0)
    return beta * (1 - overlap) + (1 - beta) * (1 - cos)


def suppress_duplicates(detections: Sequence, iou_threshold: float) -> list:
    """Greedy NMS: keep detections in descending score order unless they
    overlap an already kept one by more than ``iou_threshold``. Order of the
    survivors follows the input order."""
    if iou_threshold >= 1 or len(detections) < 2:
        return list(detections)
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    boxes = np.array([d.box.corners() for d in detections])
    overlap = box_iou_xyxy(boxes, boxes)
    kept: list[int] = []
    for i in order:
        if all(overlap[i, j] <= iou_threshold for j in kept):
            kept.append(i)
    return [detections[i] for i in sorted(kept)]


class Tracker:
    """One video per instance; feed detections frame by frame in order."""

    def __init__(self, cfg: TrackerConfig | None = None):
        self.cfg = cfg or TrackerConfig()
        self.tracks: list[Track] = []
        self._next_id = 1
        self._last_frame: int | None = None

    @property
    def live(self) -> list[Track]:
        return [t for t in self.tracks if t.state != TrackState.DEAD and not t.dropped]

    def update(self, detections: Sequence, frame: int | None = None) -> list[Track]:
        """Associate one frame of detections (objects with ``box``, ``score``,
        ``embedding`` and ``frame_index``). Pass ``frame`` for empty frames."""
        frames = {d.frame_index for d in detections} | ({frame} if frame is not None else set())
        if len(frames) > 1:
            raise ValueError(f"detections span several frames: {sorted(frames)}")
        if not frames:
            self._age(set())
            return self.live
        frame = frames.pop()
        if self._last_frame is not None and frame <= self._last_frame:
            raise ValueError(f"frame {frame} is not later than the last processed frame {self._last_frame}")
        self._last_frame = frame
        cfg = self.cfg
        dets = suppress_duplicates([d for d in detections if d.score >= cfg.score_threshold], cfg.nms_iou)
        live = sorted(self.live, key=lambda t: t.id)
        boxes = np.array([d.box.corners() for d in dets]).reshape(-1, 4)
        embs = np.array([np.asarray(d.embedding, dtype=float) for d in dets]) if dets else np.zeros((0, 1))
        cost = association_cost(live, boxes, embs, cfg.beta)
        pairs = solve_assignment(cost, forbidden=cost > cfg.max_cost) if cost.size else []
        matched_tracks = set()
        matched_dets = set()
        for ti, di in pairs:
            track, det = live[ti], dets[di]
            track.frames.append(frame)
            track.boxes.append(det.box)
            track.scores.append(det.score)
            track.embedding = _unit(cfg.momentum * track.embedding + (1 - cfg.momentum) * _unit(det.embedding))
            track.hits += 1
            track.misses = 0
            if track.state == TrackState.TENTATIVE and track.hits >= cfg.min_hits:
                track.state = TrackState.CONFIRMED
            matched_tracks.add(track.id)
            matched_dets.add(di)
        self._age(matched_tracks)
        for di, det in enumerate(dets):
            if di in matched_dets or det.score < cfg.init_threshold:
                continue
            track = Track(self._next_id, [frame], [det.box], [det.score], _unit(det.embedding))
            if cfg.min_hits <= 1:
                track.state = TrackState.CONFIRMED
            self._next_id += 1
            self.tracks.append(track)
        return self.live

    def _age(self, matched: set[int]) -> None:
        for track in self.live:
            if track.id in matched:
                continue
            track.misses += 1
            if track.misses > self.cfg.max_age:
                if track.state == TrackState.CONFIRMED:
                    track.state = TrackState.DEAD
                else:
                    track.dropped = True

    def finalize(self) -> list[Trajectory]:
        return finalize(self.tracks)


def associate_frame(tracker: Tracker, detections: Sequence, frame: int | None = None) -> list[Track]:
    return tracker.update(detections, frame)


def finalize(tracks: Iterable[Track]) -> list[Trajectory]:
    """Confirmed (and confirmed-then-dead) tracks as trajectories, sorted by id."""
    out = []
    for t in sorted(tracks, key=lambda t: t.id):
        if t.state == TrackState.TENTATIVE:
            continue
        out.append(Trajectory(t.id, [TrajectoryEntry(f, b, s) for f, b, s in zip(t.frames, t.boxes, t.scores)]))
    return out


def track_video(detections_per_frame: Sequence[Sequence], cfg: TrackerConfig | None = None) -> list[Trajectory]:
    tracker = Tracker(cfg)
    for frame, dets in enumerate(detections_per_frame):
        tracker.update(dets, frame)
    return tracker.finalize()


# -- files --------------------------------------------------------------------

def trajectories_to_json(video_id: str, trajectories: Sequence[Trajectory]) -> str:
    return json.dumps({"video_id": video_id, "trajectories": [t.to_dict() for t in trajectories]},
                      indent=1, sort_keys=True)


def save_trajectories(path, video_id: str, trajectories: Sequence[Trajectory]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(trajectories_to_json(video_id, trajectories))
    return path


def load_trajectories(path) -> tuple[str, list[Trajectory]]:
    data = json.loads(Path(path).read_text())
    return data["video_id"], [Trajectory.from_dict(t) for t in data["trajectories"]]


# -- box-level quality against ground truth ------------------------------------

def identity_switches(trajectories: Sequence[Trajectory], gt_boxes: dict[int, dict[int, Box]],
                      iou_threshold: float = 0.5) -> int:
    """Count identity switches against GT boxes ``{obj_id: {frame: Box}}``.

    Per frame, GT objects and trajectory boxes are matched one-to-one with
    IoU >= threshold; a switch is a GT object whose matched trajectory id
    differs from the one it was last matched to.
    """
    frames = sorted({f for boxes in gt_boxes.values() for f in boxes})
    obj_ids = sorted(gt_boxes)
    last: dict[int, int] = {}
    switches = 0
    for f in frames:
        objs = [o for o in obj_ids if f in gt_boxes[o]]
        trajs = [(t.id, t.box_at(f)) for t in trajectories]
        trajs = [(tid, b) for tid, b in trajs if b is not None]
        if not objs or not trajs:
            continue
        score = np.array([[iou(gt_boxes[o][f], b) for _, b in trajs] for o in objs])
        for oi, ti in solve_assignment(score, forbidden=score < iou_threshold, maximize=True):
            obj, tid = objs[oi], trajs[ti][0]
            if obj in last and last[obj] != tid:
                switches += 1
            last[obj] = tid
    return switches


def prompt_iou(trajectories: Sequence[Trajectory], gt_boxes: dict[int, dict[int, Box]]) -> dict[int, float]:
    """Mean box IoU per GT object against its best-matching trajectory.

    Trajectories are assigned to GT objects one-to-one maximizing the summed
    per-frame IoU; frames where the trajectory has no box score 0.
    """
    obj_ids = sorted(gt_boxes)
    if not obj_ids:
        return {}

    def frame_ious(o, t):
        return [iou(b, t.box_at(f)) if t.box_at(f) is not None else 0.0
                for f, b in sorted(gt_boxes[o].items())]

    table = [[frame_ious(o, t) for t in trajectories] for o in obj_ids]
    out = {o: 0.0 for o in obj_ids}
    if trajectories:
        score = np.array([[np.mean(v) if v else 0.0 for v in row] for row in table])
        for oi, ti in solve_assignment(score, maximize=True):
            out[obj_ids[oi]] = float(score[oi, ti])
    return out

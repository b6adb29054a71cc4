"""Detect, associate, prompt, segment, evaluate: the full video pipeline.

Output layout under ``out_dir``::

    <video>/trajectories.json
    <video>/masks/track%03d/%05d.png
    report.json, report.csv          # dataset-level J/F table
    tracking.json                    # box-level prompt IoU and identity switches
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image

from .association import (Trajectory, TrajectoryEntry, TrackerConfig, identity_switches, prompt_iou,
                          save_trajectories, track_video)
from .geometry import Box
from .metrics import EvalReport, MaskSequence, ObjectScore, score_video, summarize
from .model import STDNet, outputs_to_detections
from .segmenter import Mask, OracleSegmenter, RemoteSegmenter, jitter_prompts, prompts_from_trajectories
from .synthetic import FormatError, SyntheticVideo, load
from .train import clip_indices, video_tensor

log = logging.getLogger(__name__)


# -- ground truth views ---------------------------------------------------------

def gt_sequences(video: SyntheticVideo) -> list[MaskSequence]:
    return [MaskSequence(obj_id, video.masks[k]) for k, obj_id in enumerate(video.ids)]


def gt_box_table(video: SyntheticVideo) -> dict[int, dict[int, Box]]:
    """``{obj_id: {frame: Box}}`` over the frames where the object is visible."""
    return {obj_id: {t: video.box(k, t) for t in range(video.n_frames) if video.present(k, t)}
            for k, obj_id in enumerate(video.ids)}


def gt_trajectories(video: SyntheticVideo) -> list[Trajectory]:
    """Perfect trajectories: GT boxes with GT identities, score 1."""
    table = gt_box_table(video)
    return [Trajectory(obj_id, [TrajectoryEntry(t, b, 1.0) for t, b in sorted(table[obj_id].items())])
            for obj_id in video.ids]


# -- detection --------------------------------------------------------------------

def detect_video(model: STDNet, video: SyntheticVideo, batch_size: int = 8) -> list[list]:
    """Per-frame detections, each frame decoded from its own edge-replicated clip."""
    model.eval()
    dtype = next(model.parameters()).dtype
    frames = video_tensor(video, dtype)
    T, radius = video.n_frames, model.attn_cfg.radius
    out: list[list] = []
    with torch.no_grad():
        for start in range(0, T, batch_size):
            ts = list(range(start, min(T, start + batch_size)))
            clips = torch.stack([frames[clip_indices(t, radius, T)] for t in ts])
            res = model(clips)
            out.extend(outputs_to_detections(res, t, i) for i, t in enumerate(ts))
    return out


# -- segmentation -----------------------------------------------------------------

def make_segmenter(backend: str, video: SyntheticVideo, jobs: int = 1):
    if backend == "oracle":
        K = len(video.ids)
        boxes = [[video.box(k, t) for t in range(video.n_frames)] for k in range(K)]
        return OracleSegmenter(video.masks, boxes)
    if backend.startswith("remote:"):
        return RemoteSegmenter(backend[len("remote:"):], max_in_flight=jobs)
    raise ValueError(f"unknown segmenter backend {backend!r}")


def predicted_sequences(masks: Sequence[Mask], n_frames: int, shape: tuple[int, int]) -> list[MaskSequence]:
    by_track: dict[int, list] = {}
    for m in masks:
        by_track.setdefault(m.track_id, []).append((m.frame, m.data))
    return [MaskSequence.from_entries(tid, entries, n_frames, shape) for tid, entries in sorted(by_track.items())]


@dataclass
class VideoResult:
    name: str
    trajectories: list[Trajectory]
    masks: list[Mask]
    objects: list[ObjectScore]
    prompt_iou: dict[int, float] = field(default_factory=dict)
    id_switches: int = 0


def run_video(video: SyntheticVideo, name: str = "", *, model: STDNet | None = None,
              tracker_cfg: TrackerConfig | None = None, segmenter: str = "oracle", jitter: float = 0.0,
              seed: int = 0, prompts_from_gt: bool = False, jobs: int = 1, tol=None) -> VideoResult:
    if prompts_from_gt:
        trajectories = gt_trajectories(video)
    else:
        if model is None:
            raise ValueError("a model is required unless prompts come from ground truth")
        trajectories = track_video(detect_video(model, video), tracker_cfg)
    prompts = jitter_prompts(prompts_from_trajectories(trajectories), jitter, seed)
    masks = make_segmenter(segmenter, video, jobs).segment_prompts(video.frames, prompts)
    preds = predicted_sequences(masks, video.n_frames, video.size)
    objects = score_video(preds, gt_sequences(video), tol, name)
    boxes = gt_box_table(video)
    return VideoResult(name, trajectories, masks, objects, prompt_iou(trajectories, boxes),
                       identity_switches(trajectories, boxes))


# -- files ------------------------------------------------------------------------

def save_mask_png(path: Path, mask: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask.astype(np.uint8) * 255).save(path)


def write_video_outputs(result: VideoResult, out_dir) -> Path:
    vdir = Path(out_dir) / result.name
    save_trajectories(vdir / "trajectories.json", result.name, result.trajectories)
    for m in result.masks:
        save_mask_png(vdir / "masks" / f"track{m.track_id:03d}" / f"{m.frame:05d}.png", m.data)
    return vdir


def load_predicted_masks(video_dir, n_frames: int, shape: tuple[int, int]) -> list[MaskSequence]:
    """Read ``masks/track%03d/%05d.png`` back into per-track sequences."""
    root = Path(video_dir) / "masks"
    if not root.is_dir():
        return []
    out = []
    for tdir in sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("track")):
        entries = []
        for png in sorted(tdir.glob("*.png")):
            try:
                entries.append((int(png.stem), np.array(Image.open(png).convert("L")) > 127))
            except (OSError, ValueError) as exc:
                raise FormatError(f"{png}: {exc}") from exc
        out.append(MaskSequence.from_entries(int(tdir.name[5:]), entries, n_frames, shape))
    return out


def dataset_dirs(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError(f"missing dataset directory: {directory}")
    dirs = sorted(p for p in directory.iterdir() if p.is_dir() and (p / "annotations.json").exists())
    if not dirs:
        raise FormatError(f"no videos found under {directory}")
    return dirs


def write_report(report: EvalReport, out_dir, tracking: dict | None = None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json())
    (out_dir / "report.csv").write_text(report.to_csv())
    if tracking is not None:
        (out_dir / "tracking.json").write_text(json.dumps(tracking, indent=2, sort_keys=True))


def run_pipeline(videos: Sequence[SyntheticVideo], names: Sequence[str], out_dir=None, *,
                 model: STDNet | None = None, tracker_cfg: TrackerConfig | None = None,
                 segmenter: str = "oracle", jitter: float = 0.0, seed: int = 0,
                 prompts_from_gt: bool = False, jobs: int = 1) -> tuple[EvalReport, list[VideoResult]]:
    """Run every video and write artifacts when ``out_dir`` is given.

    Videos are processed in order; with a remote backend ``jobs`` bounds the
    number of requests in flight. Jitter noise for video i is seeded from
    ``(seed, i)`` so results do not depend on scheduling.
    """
    results = []
    for i, (video, name) in enumerate(zip(videos, names)):
        results.append(run_video(video, name, model=model, tracker_cfg=tracker_cfg, segmenter=segmenter,
                                 jitter=jitter, seed=seed * 1_000_003 + i,
                                 prompts_from_gt=prompts_from_gt, jobs=jobs))
    report = summarize([o for r in results for o in r.objects])
    if out_dir is not None:
        for r in results:
            write_video_outputs(r, out_dir)
        ious = [v for r in results for v in r.prompt_iou.values()]
        tracking = {"mean_prompt_iou": float(np.mean(ious)) if ious else 0.0,
                    "id_switches": int(sum(r.id_switches for r in results)),
                    "videos": {r.name: {"prompt_iou": {str(k): v for k, v in r.prompt_iou.items()},
                                        "id_switches": r.id_switches} for r in results}}
        write_report(report, out_dir, tracking)
    return report, results


def evaluate_outputs(pred_dir, data_dir, jobs: int = 1) -> EvalReport:
    """Score mask PNGs written by `run_pipeline` against a dataset on disk."""
    dirs = dataset_dirs(data_dir)

    def one(d: Path) -> list[ObjectScore]:
        video = load(d)
        preds = load_predicted_masks(Path(pred_dir) / d.name, video.n_frames, video.size)
        return score_video(preds, gt_sequences(video), video=d.name)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        per_video = list(pool.map(one, dirs))
    return summarize([o for objs in per_video for o in objs])

"""Training loop for the tracking network on synthetic videos."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .attention import AttentionConfig, ConfigError, load_checkpoint, save_checkpoint
from .features import frame_to_tensor
from .losses import FrameTargets, LossConfig, NumericError, clip_pair_loss
from .model import ModelConfig, STDNet
from .synthetic import SyntheticVideo

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 1e-4
    batch_size: int = 4
    weight_decay: float = 1e-4
    grad_clip: float = 0.1
    max_gap: int = 2
    lr_drop_at: float = 0.8
    log_every: int = 1

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0 or self.max_gap < 1:
            raise ConfigError("steps >= 0, batch_size >= 1, lr > 0 and max_gap >= 1 are required")
        if not 0 < self.lr_drop_at <= 1:
            raise ConfigError("lr_drop_at must lie in (0, 1]")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)


def video_tensor(video: SyntheticVideo, dtype=torch.float32) -> torch.Tensor:
    """All frames as ``(T, 3, H, W)``."""
    return torch.stack([frame_to_tensor(f, dtype) for f in video.frames])


def clip_indices(t: int, radius: int, n_frames: int) -> list[int]:
    """Frame indices of the clip centered on t, replicating the video edges."""
    return [min(max(t + o, 0), n_frames - 1) for o in range(-radius, radius + 1)]


def frame_targets(video: SyntheticVideo, t: int, dtype=torch.float32) -> FrameTargets:
    keep = [k for k in range(len(video.ids)) if video.present(k, t)]
    boxes = torch.tensor(np.array([video.box(k, t).to_list() for k in keep]).reshape(-1, 4), dtype=dtype)
    return FrameTargets(boxes, [video.ids[k] for k in keep])


class Trainer:
    """Single-owner optimizer loop with JSONL logging and resumable checkpoints."""

    def __init__(self, model: STDNet, videos: Sequence[SyntheticVideo], loss_cfg: LossConfig,
                 train_cfg: TrainConfig, seed: int = 0):
        self.model, self.videos = model, list(videos)
        self.loss_cfg, self.cfg = loss_cfg, train_cfg
        self.seed = seed
        self.step = 0
        self.optimizer = torch.optim.AdamW(model.parameters(), lr=train_cfg.lr,
                                           weight_decay=train_cfg.weight_decay)
        dtype = next(model.parameters()).dtype
        self._frames = [video_tensor(v, dtype) for v in self.videos]

    def current_lr(self) -> float:
        drop = self.step >= int(self.cfg.lr_drop_at * self.cfg.steps)
        return self.cfg.lr * (0.1 if drop else 1.0)

    def _sample(self, rng: np.random.Generator):
        v = int(rng.integers(len(self.videos)))
        T = self.videos[v].n_frames
        t = int(rng.integers(T))
        lo, hi = max(0, t - self.cfg.max_gap), min(T - 1, t + self.cfg.max_gap)
        u = int(rng.choice([x for x in range(lo, hi + 1) if x != t]))
        return v, t, u

    def batch_loss(self, samples) -> dict:
        radius = self.model.attn_cfg.radius
        clips = []
        for v, t, u in samples:
            frames = self._frames[v]
            T = frames.shape[0]
            clips.append(frames[clip_indices(t, radius, T)])
            clips.append(frames[clip_indices(u, radius, T)])
        out = self.model(torch.stack(clips))
        dtype = out["boxes"].dtype
        parts = {"cls": 0.0, "box": 0.0, "cl": 0.0, "total": 0.0}
        for i, (v, t, u) in enumerate(samples):
            o_t = {k: val[2 * i] for k, val in out.items()}
            o_u = {k: val[2 * i + 1] for k, val in out.items()}
            video = self.videos[v]
            p = clip_pair_loss(o_t, o_u, frame_targets(video, t, dtype), frame_targets(video, u, dtype),
                               self.loss_cfg)
            for k in parts:
                parts[k] = parts[k] + p[k] / len(samples)
        return parts

    def run(self, steps: int | None = None, log_path=None,
            on_step: Callable[[dict], None] | None = None) -> list[dict]:
        steps = self.cfg.steps if steps is None else steps
        records = []
        log_file = open(log_path, "a") if log_path else None
        try:
            for _ in range(steps):
                rng = np.random.default_rng([self.seed, self.step])
                samples = [self._sample(rng) for _ in range(self.cfg.batch_size)]
                torch.manual_seed(self.seed * 1_000_003 + self.step)
                for group in self.optimizer.param_groups:
                    group["lr"] = self.current_lr()
                parts = self.batch_loss(samples)
                total = parts["total"]
                if not torch.isfinite(total):
                    raise NumericError(f"non-finite loss at step {self.step}: "
                                       f"{ {k: float(v) for k, v in parts.items()} } samples={samples}")
                self.optimizer.zero_grad()
                total.backward()
                if self.cfg.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.grad_clip)
                self.optimizer.step()
                rec = {"step": self.step, "lr": self.current_lr(),
                       **{k: float(v.detach()) for k, v in parts.items()},
                       "lambda_cls": self.loss_cfg.cls_weight, "lambda_l1": self.loss_cfg.l1_weight,
                       "lambda_giou": self.loss_cfg.giou_weight, "tau": self.loss_cfg.tau}
                records.append(rec)
                if log_file and self.step % self.cfg.log_every == 0:
                    log_file.write(json.dumps(rec, sort_keys=True) + "\n")
                if on_step:
                    on_step(rec)
                self.step += 1
        finally:
            if log_file:
                log_file.close()
        return records

    # -- checkpoints -------------------------------------------------------------

    def save(self, path) -> Path:
        out = save_checkpoint(self.model, path, self.model.config_dict(),
                              {"step": self.step, "seed": self.seed, "loss": asdict(self.loss_cfg),
                               "train": asdict(self.cfg)})
        torch.save(self.optimizer.state_dict(), Path(path).with_suffix(".optim.pt"))
        return out

    def resume(self, path) -> None:
        state, meta = load_checkpoint(path)
        self.model.load_state_dict(state)
        self.step = int(meta["step"])
        opt_path = Path(path).with_suffix(".optim.pt")
        if opt_path.exists():
            self.optimizer.load_state_dict(torch.load(opt_path))


def model_from_checkpoint(path) -> tuple[STDNet, dict]:
    state, meta = load_checkpoint(path)
    cfg = meta["config"]
    model = STDNet(AttentionConfig.from_dict(cfg["attention"]), ModelConfig.from_dict(cfg["model"]))
    model.load_state_dict(state)
    model.eval()
    return model, meta

"""The tracking network: backbone, spatial-temporal encoder, query decoder, three heads."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .attention import AttentionConfig, ConfigError, DeformableBranch, EncoderOutput, STDEncoder
from .features import Backbone
from .geometry import Box, clip_cxcywh


@dataclass(frozen=True)
class ModelConfig:
    num_queries: int = 100
    dec_layers: int = 2
    dec_points: int = 4
    reid_dim: int = 32
    first_stride: int = 8
    backbone_hidden: int = 32
    # stop gradients through the reference points handed to the next decoder layer;
    # off by default so autograd returns the exact gradient of the loss
    detach_refs: bool = False

    def __post_init__(self):
        if self.num_queries < 1 or self.dec_layers < 1 or self.dec_points < 1 or self.reid_dim < 1:
            raise ConfigError("num_queries, dec_layers, dec_points and reid_dim must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class ObjectQuerySet:
    """Learned query embeddings and their reference points for one frame."""

    embeddings: torch.Tensor  # (Q, C)
    reference_points: torch.Tensor  # (Q, 2)
    frame_index: int

    def __post_init__(self):
        r = self.reference_points
        if r.min() < 0 or r.max() > 1:
            raise ValueError("reference points must lie in [0,1]^2")


@dataclass(frozen=True)
class Detection:
    logit: float
    box: Box
    embedding: np.ndarray
    query_index: int
    frame_index: int

    @property
    def score(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.logit)))


def inverse_sigmoid(x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    x = x.clamp(eps, 1 - eps)
    return torch.log(x / (1 - x))


class MLP(nn.Module):
    def __init__(self, dim_in: int, hidden: int, dim_out: int, n_layers: int):
        super().__init__()
        dims = [dim_in] + [hidden] * (n_layers - 1) + [dim_out]
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims, dims[1:]))

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.relu(x)
        return x


class DecoderLayer(nn.Module):
    def __init__(self, cfg: AttentionConfig, n_points: int):
        super().__init__()
        C = cfg.channels
        self.self_attn = nn.MultiheadAttention(C, cfg.n_heads, batch_first=True)
        self.norm1 = nn.LayerNorm(C)
        self.cross = DeformableBranch(C, cfg.n_heads, cfg.n_levels, n_points, cfg.offset_init)
        self.norm2 = nn.LayerNorm(C)
        self.ffn = nn.Sequential(nn.Linear(C, cfg.ffn_dim), nn.ReLU(), nn.Linear(cfg.ffn_dim, C))
        self.norm3 = nn.LayerNorm(C)

    def forward(self, tgt, query_pos, ref, maps):
        q = tgt + query_pos
        tgt = self.norm1(tgt + self.self_attn(q, q, tgt, need_weights=False)[0])
        tgt = self.norm2(tgt + self.cross(tgt + query_pos, ref, maps))
        return self.norm3(tgt + self.ffn(tgt))


class STDNet(nn.Module):
    """Clip in, per-query class logit, box and unit ReID embedding out."""

    def __init__(self, attn: AttentionConfig, model: ModelConfig):
        super().__init__()
        self.attn_cfg, self.model_cfg = attn, model
        C = attn.channels
        self.backbone = Backbone(C, attn.n_levels, model.first_stride, model.backbone_hidden)
        self.encoder = STDEncoder(attn)
        self.query_embed = nn.Embedding(model.num_queries, 2 * C)
        self.ref_head = nn.Linear(C, 2)
        self.decoder = nn.ModuleList(DecoderLayer(attn, model.dec_points) for _ in range(model.dec_layers))
        self.box_heads = nn.ModuleList(MLP(C, C, 4, 3) for _ in range(model.dec_layers))
        self.class_head = nn.Linear(C, 1)
        self.reid_head = nn.Sequential(nn.Linear(C, C), nn.ReLU(), nn.Linear(C, model.reid_dim))
        nn.init.constant_(self.class_head.bias, -2.0)
        for head in self.box_heads:
            nn.init.zeros_(head.layers[-1].weight)
            nn.init.zeros_(head.layers[-1].bias)
            nn.init.constant_(head.layers[-1].bias[2:], -2.0)

    def object_queries(self, frame_index: int = 0) -> ObjectQuerySet:
        pos, _ = self.query_embed.weight.split(self.attn_cfg.channels, dim=1)
        return ObjectQuerySet(self.query_embed.weight[:, self.attn_cfg.channels:],
                              self.ref_head(pos).sigmoid(), frame_index)

    def encode(self, clips: torch.Tensor) -> EncoderOutput:
        """clips ``(N, T, 3, H, W)`` with T = 2 * radius + 1; encodes the center frame."""
        N, T = clips.shape[:2]
        if T != 2 * self.attn_cfg.radius + 1:
            raise ConfigError(f"clip has {T} frames; radius {self.attn_cfg.radius} needs "
                              f"{2 * self.attn_cfg.radius + 1}")
        levels = self.backbone(clips.flatten(0, 1))
        levels = [m.view(N, T, *m.shape[1:]) for m in levels]
        return self.encoder(levels, frames=[T // 2])

    def decode(self, enc: EncoderOutput) -> dict:
        memory = enc.e[:, 0]  # (N, S, C)
        N, _, C = memory.shape
        maps, start = [], 0
        for H, W in enc.shapes:
            maps.append(memory[:, start:start + H * W].transpose(1, 2).reshape(N, C, H, W))
            start += H * W
        pos, tgt = self.query_embed.weight.split(C, dim=1)
        pos = pos[None].expand(N, -1, -1)
        tgt = tgt[None].expand(N, -1, -1)
        ref = self.ref_head(pos).sigmoid()
        boxes = None
        for layer, box_head in zip(self.decoder, self.box_heads):
            tgt = layer(tgt, pos, ref, maps)
            delta = box_head(tgt)
            if boxes is None:
                boxes = torch.cat([(inverse_sigmoid(ref) + delta[..., :2]).sigmoid(),
                                   delta[..., 2:].sigmoid()], -1)
            else:
                boxes = (inverse_sigmoid(boxes) + delta).sigmoid()
            ref = boxes[..., :2].detach() if self.model_cfg.detach_refs else boxes[..., :2]
        return {"logits": self.class_head(tgt)[..., 0], "boxes": boxes,
                "reid": F.normalize(self.reid_head(tgt), dim=-1)}

    def forward(self, clips: torch.Tensor) -> dict:
        return self.decode(self.encode(clips))

    def config_dict(self) -> dict:
        return {"attention": asdict(self.attn_cfg), "model": asdict(self.model_cfg)}


def outputs_to_detections(out: dict, frame_index: int, index: int = 0) -> list[Detection]:
    logits = out["logits"][index].detach().cpu().numpy()
    boxes = out["boxes"][index].detach().cpu().numpy()
    reid = out["reid"][index].detach().cpu().numpy()
    return [Detection(float(logits[q]), clip_cxcywh(boxes[q]), reid[q].astype(float), q, frame_index)
            for q in range(len(logits))]


def decode(model: STDNet, clip: torch.Tensor, frame_index: int,
           queries: ObjectQuerySet | None = None) -> list[Detection]:
    """Detections for the center frame of a single clip ``(T, 3, H, W)``."""
    if queries is not None and queries.frame_index != frame_index:
        raise ValueError(f"queries belong to frame {queries.frame_index}, clip is centered on {frame_index}")
    with torch.no_grad():
        out = model(clip[None])
    return outputs_to_detections(out, frame_index)

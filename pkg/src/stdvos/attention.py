"""Spatial-temporal decoupled deformable attention.

A query with content ``z`` and normalized reference point ``p`` attends to a
handful of sampled locations. The spatial branch samples ``k_intra`` points
on every level of its own frame; the temporal branch samples ``k_inter``
points on every level of each of the ``2d`` neighbouring frames, reusing the
same reference point. Per head, attention weights are softmax-normalized
jointly over all sampling slots of the branch. A channel-wise gate then mixes
the two branch outputs.

Both branches share one implementation, `DeformableBranch`, which treats the
sampled maps as a flat list of "groups": the ``L`` levels for the spatial
branch and the ``2d * L`` (frame, level) pairs, frame-major, for the temporal
branch.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .features import ClipFeatures, FeaturePyramid, bilinear_gather


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AttentionConfig:
    n_heads: int = 8
    n_levels: int = 3
    k_intra: int = 4
    k_inter: int = 4
    radius: int = 3
    channels: int = 64
    n_layers: int = 2
    ffn_dim: int = 128
    fusion_hidden: int = 16
    offset_init: str = "grid"

    def __post_init__(self):
        if self.n_heads < 1:
            raise ConfigError("n_heads must be >= 1")
        if self.channels % self.n_heads:
            raise ConfigError(f"channels ({self.channels}) must be divisible by n_heads ({self.n_heads})")
        if self.n_levels < 1 or self.k_intra < 1:
            raise ConfigError("n_levels and k_intra must be >= 1")
        if self.k_inter < 0:
            raise ConfigError("k_inter must be >= 0 (0 disables the temporal branch)")
        if self.radius < 0:
            raise ConfigError("radius must be >= 0")
        if self.n_layers < 1 or self.ffn_dim < 1 or self.fusion_hidden < 1:
            raise ConfigError("n_layers, ffn_dim and fusion_hidden must be >= 1")
        if self.offset_init not in ("grid", "zero"):
            raise ConfigError(f"offset_init must be 'grid' or 'zero', got {self.offset_init!r}")

    @property
    def temporal(self) -> bool:
        return self.radius >= 1 and self.k_inter >= 1

    @classmethod
    def from_dict(cls, data: dict) -> "AttentionConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown attention config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class QueryFeature:
    z: torch.Tensor  # (C,)
    ref: tuple[float, float]

    def __post_init__(self):
        x, y = self.ref
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise ValueError(f"reference point outside [0,1]^2: {self.ref}")


@dataclass
class EncoderOutput:
    """Per-frame, per-position features, each ``(T, S, C)``.

    ``e_inter`` is ``None`` when the temporal branch is disabled.
    """

    e_intra: torch.Tensor
    e_inter: torch.Tensor | None
    e: torch.Tensor
    frames: list[int]
    shapes: list[tuple[int, int]]


class DeformableBranch(nn.Module):
    """One multi-scale deformable attention branch over ``n_groups`` maps."""

    def __init__(self, channels: int, n_heads: int, n_groups: int, n_points: int,
                 offset_init: str = "grid"):
        super().__init__()
        self.channels, self.n_heads = channels, n_heads
        self.n_groups, self.n_points = n_groups, n_points
        self.head_dim = channels // n_heads
        self.sampling_offsets = nn.Linear(channels, n_heads * n_groups * n_points * 2)
        self.attention_logits = nn.Linear(channels, n_heads * n_groups * n_points)
        # bias-free so that projecting maps before sampling equals projecting samples
        self.value_proj = nn.Linear(channels, channels, bias=False)
        self.output_proj = nn.Linear(channels, channels, bias=False)
        self.reset_parameters(offset_init)

    def reset_parameters(self, offset_init: str = "grid") -> None:
        nn.init.zeros_(self.sampling_offsets.weight)
        nn.init.zeros_(self.sampling_offsets.bias)
        if offset_init == "grid":
            theta = torch.arange(self.n_heads, dtype=torch.float64) * (2.0 * math.pi / self.n_heads)
            grid = torch.stack([theta.cos(), theta.sin()], -1)
            grid = grid / grid.abs().max(-1, keepdim=True)[0]
            grid = grid.view(self.n_heads, 1, 1, 2).repeat(1, self.n_groups, self.n_points, 1)
            grid = grid * torch.arange(1, self.n_points + 1, dtype=torch.float64).view(1, 1, -1, 1)
            with torch.no_grad():
                self.sampling_offsets.bias.copy_(grid.reshape(-1))
        nn.init.zeros_(self.attention_logits.weight)
        nn.init.zeros_(self.attention_logits.bias)
        nn.init.xavier_uniform_(self.value_proj.weight)
        nn.init.xavier_uniform_(self.output_proj.weight)

    def sampling(self, query: torch.Tensor):
        """Offsets ``(N, Q, M, G, K, 2)`` and normalized weights ``(N, Q, M, G, K)``."""
        N, Q, _ = query.shape
        M, G, K = self.n_heads, self.n_groups, self.n_points
        offsets = self.sampling_offsets(query).view(N, Q, M, G, K, 2)
        logits = self.attention_logits(query).view(N, Q, M, G * K)
        weights = F.softmax(logits, dim=-1).view(N, Q, M, G, K)
        return offsets, weights

    def forward(self, query: torch.Tensor, ref: torch.Tensor, maps: Sequence[torch.Tensor],
                return_weights: bool = False):
        """query ``(N, Q, C)``; ref ``(N, Q, 2)`` normalized; maps: G tensors ``(N, C, H_g, W_g)``."""
        if len(maps) != self.n_groups:
            raise ConfigError(f"branch expects {self.n_groups} maps, got {len(maps)}")
        N, Q, C = query.shape
        M, K, D = self.n_heads, self.n_points, self.head_dim
        offsets, weights = self.sampling(query)
        acc = query.new_zeros(N, M, Q, D)
        for g, fmap in enumerate(maps):
            H, W = fmap.shape[-2:]
            value = self.value_proj(fmap.flatten(2).transpose(1, 2))  # (N, HW, C)
            value = value.view(N, H, W, M, D).permute(0, 3, 4, 1, 2).reshape(N * M, D, H, W)
            base = ref * ref.new_tensor([W, H])  # (N, Q, 2)
            loc = base[:, :, None, None, :] + offsets[:, :, :, g]  # (N, Q, M, K, 2)
            loc = loc.permute(0, 2, 1, 3, 4).reshape(N * M, Q * K, 2)
            samples = bilinear_gather(value, loc).view(N, M, Q, K, D)
            w = weights[:, :, :, g].permute(0, 2, 1, 3)  # (N, M, Q, K)
            acc = acc + (samples * w[..., None]).sum(3)
        out = self.output_proj(acc.permute(0, 2, 1, 3).reshape(N, Q, C))
        if return_weights:
            return out, weights
        return out


class DynamicFusion(nn.Module):
    """Channel-wise two-way gate mixing the spatial and temporal outputs."""

    def __init__(self, channels: int, hidden: int):
        super().__init__()
        self.squeeze = nn.Linear(channels, hidden)
        self.gate_intra = nn.Linear(hidden, channels)
        self.gate_inter = nn.Linear(hidden, channels)
        for lin in (self.gate_intra, self.gate_inter):
            nn.init.zeros_(lin.weight)
            nn.init.zeros_(lin.bias)

    def gates(self, e_intra: torch.Tensor, e_inter: torch.Tensor):
        """Per-frame weights ``(w1, w2)``, each ``(N, 1, C)``."""
        summed = e_intra + e_inter
        pooled = summed.mean(dim=1)  # average over all positions of the frame
        hidden = F.relu(self.squeeze(pooled))
        g = torch.stack([self.gate_intra(hidden), self.gate_inter(hidden)], dim=0)
        w = F.softmax(g, dim=0)
        return w[0][:, None, :], w[1][:, None, :]

    def forward(self, e_intra: torch.Tensor, e_inter: torch.Tensor, return_weights: bool = False):
        if e_intra.shape != e_inter.shape:
            raise ValueError(f"shape mismatch: {tuple(e_intra.shape)} vs {tuple(e_inter.shape)}")
        w1, w2 = self.gates(e_intra, e_inter)
        out = e_intra * w1 + e_inter * w2
        if return_weights:
            return out, (w1, w2)
        return out


def dynamic_fusion(e_intra: torch.Tensor, e_inter: torch.Tensor, fusion: DynamicFusion) -> torch.Tensor:
    """Fuse ``(S, C)`` or ``(N, S, C)`` branch outputs of one frame each."""
    squeeze = e_intra.dim() == 2
    if squeeze:
        e_intra, e_inter = e_intra[None], e_inter[None]
    out = fusion(e_intra, e_inter)
    return out[0] if squeeze else out


class EncoderLayer(nn.Module):
    def __init__(self, cfg: AttentionConfig):
        super().__init__()
        self.cfg = cfg
        C = cfg.channels
        self.spatial = DeformableBranch(C, cfg.n_heads, cfg.n_levels, cfg.k_intra, cfg.offset_init)
        if cfg.temporal:
            self.temporal = DeformableBranch(C, cfg.n_heads, 2 * cfg.radius * cfg.n_levels,
                                             cfg.k_inter, cfg.offset_init)
            self.fusion = DynamicFusion(C, cfg.fusion_hidden)
        else:
            self.temporal = None
            self.fusion = None
        self.norm1 = nn.LayerNorm(C)
        self.ffn = nn.Sequential(nn.Linear(C, cfg.ffn_dim), nn.ReLU(), nn.Linear(cfg.ffn_dim, C))
        self.norm2 = nn.LayerNorm(C)

    def forward(self, src: torch.Tensor, pos: torch.Tensor, ref: torch.Tensor,
                shapes: list[tuple[int, int]], frames: Sequence[int] | None = None):
        """src ``(N, T, S, C)``; pos ``(S, C)``; ref ``(S, 2)``.

        Returns the updated tokens for ``frames`` (default: all) as
        ``(N, T', S, C)`` together with the branch outputs.
        """
        N, T, S, C = src.shape
        frames = list(range(T)) if frames is None else list(frames)
        Tq = len(frames)
        maps = _to_maps(src, shapes)  # per level (N, T, C, H, W)
        idx = torch.as_tensor(frames)
        query = (src[:, idx] + pos).reshape(N * Tq, S, C)
        refs = ref.expand(N * Tq, S, 2)
        own = [m[:, idx].reshape(N * Tq, *m.shape[2:]) for m in maps]
        e_intra = self.spatial(query, refs, own)
        e_inter = None
        if self.temporal is not None:
            d = self.cfg.radius
            nbr = []
            for t in frames:
                nbr.append([min(max(t + o, 0), T - 1) for o in range(-d, d + 1) if o != 0])
            nbr = torch.as_tensor(nbr)  # (Tq, 2d)
            groups = []
            for j in range(nbr.shape[1]):
                for m in maps:
                    groups.append(m[:, nbr[:, j]].reshape(N * Tq, *m.shape[2:]))
            e_inter = self.temporal(query, refs, groups)
            attn = self.fusion(e_intra, e_inter)
        else:
            attn = e_intra
        x = self.norm1(src[:, idx].reshape(N * Tq, S, C) + attn)
        x = self.norm2(x + self.ffn(x))
        shape = (N, Tq, S, C)
        return (x.view(shape), e_intra.view(shape),
                None if e_inter is None else e_inter.view(shape))


def _to_maps(src: torch.Tensor, shapes: list[tuple[int, int]]) -> list[torch.Tensor]:
    N, T, S, C = src.shape
    out, start = [], 0
    for H, W in shapes:
        chunk = src[:, :, start:start + H * W]
        out.append(chunk.transpose(2, 3).reshape(N, T, C, H, W))
        start += H * W
    return out


def flatten_levels(levels: Sequence[torch.Tensor]) -> tuple[torch.Tensor, list[tuple[int, int]]]:
    """Per-level ``(N, T, C, H, W)`` maps to tokens ``(N, T, S, C)``."""
    shapes = [tuple(m.shape[-2:]) for m in levels]
    tokens = torch.cat([m.flatten(3).transpose(2, 3) for m in levels], dim=2)
    return tokens, shapes


def reference_points(shapes: Sequence[tuple[int, int]], dtype=torch.float32) -> torch.Tensor:
    """Normalized location of every texel center, ``(S, 2)``.

    Texel ``(i, j)`` maps to ``(i / W, j / H)`` so that rescaling lands back
    on the texel center.
    """
    refs = []
    for H, W in shapes:
        ys, xs = torch.meshgrid(torch.arange(H, dtype=dtype) / H, torch.arange(W, dtype=dtype) / W,
                                indexing="ij")
        refs.append(torch.stack([xs.reshape(-1), ys.reshape(-1)], -1))
    return torch.cat(refs, 0)


class STDEncoder(nn.Module):
    def __init__(self, cfg: AttentionConfig):
        super().__init__()
        self.cfg = cfg
        self.level_embed = nn.Parameter(torch.randn(cfg.n_levels, cfg.channels) * 0.1)
        self.pos_proj = nn.Linear(2, cfg.channels)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_layers))

    def positional(self, shapes, dtype) -> tuple[torch.Tensor, torch.Tensor]:
        ref = reference_points(shapes, dtype)
        lvl = torch.cat([self.level_embed[l].expand(H * W, -1) for l, (H, W) in enumerate(shapes)], 0)
        return ref, lvl + self.pos_proj(ref)

    def forward(self, levels: Sequence[torch.Tensor], frames: Sequence[int] | None = None) -> EncoderOutput:
        """levels: per level ``(N, T, C, H, W)``. ``frames`` limits the last layer's outputs."""
        if len(levels) != self.cfg.n_levels:
            raise ConfigError(f"expected {self.cfg.n_levels} levels, got {len(levels)}")
        src, shapes = flatten_levels(levels)
        ref, pos = self.positional(shapes, src.dtype)
        T = src.shape[1]
        out_frames = list(range(T)) if frames is None else list(frames)
        e_intra = e_inter = None
        for i, layer in enumerate(self.layers):
            last = i == len(self.layers) - 1
            src, e_intra, e_inter = layer(src, pos, ref, shapes, out_frames if last else None)
        return EncoderOutput(e_intra, e_inter, src, out_frames, shapes)


# -- functional entry points on domain types ----------------------------------

def _queries_to_tensors(queries, dtype):
    if isinstance(queries, tuple):
        return queries
    z = torch.stack([q.z for q in queries]).to(dtype)
    ref = torch.tensor([q.ref for q in queries], dtype=dtype)
    return z, ref


def s_msda(queries, pyramid: FeaturePyramid, branch: DeformableBranch, cfg: AttentionConfig,
           return_weights: bool = False):
    """Spatial branch for one frame. ``queries``: QueryFeature list or ``(z, ref)`` tensors."""
    if pyramid.num_levels != cfg.n_levels or branch.n_groups != cfg.n_levels:
        raise ConfigError(f"pyramid has {pyramid.num_levels} levels, config expects {cfg.n_levels}")
    dtype = pyramid.levels[0].data.dtype
    z, ref = _queries_to_tensors(queries, dtype)
    maps = [lvl.data[None] for lvl in pyramid.levels]
    out = branch(z[None], ref[None], maps, return_weights=return_weights)
    if return_weights:
        return out[0][0], out[1][0]
    return out[0]


def t_msda(queries, clip: ClipFeatures, branch: DeformableBranch, cfg: AttentionConfig,
           return_weights: bool = False):
    """Temporal branch for the clip's center frame."""
    if cfg.radius < 1:
        raise ConfigError("t_msda requires radius >= 1; bypass the temporal branch when radius == 0")
    if clip.radius != cfg.radius:
        raise ConfigError(f"clip radius {clip.radius} != config radius {cfg.radius}")
    if branch.n_groups != 2 * cfg.radius * cfg.n_levels:
        raise ConfigError("temporal branch group count does not match 2 * radius * n_levels")
    dtype = clip.pyramids[0].levels[0].data.dtype
    z, ref = _queries_to_tensors(queries, dtype)
    maps = []
    for i, pyr in enumerate(clip.pyramids):
        if i == clip.radius:
            continue
        maps.extend(lvl.data[None] for lvl in pyr.levels)
    out = branch(z[None], ref[None], maps, return_weights=return_weights)
    if return_weights:
        return out[0][0], out[1][0]
    return out[0]


def encoder_forward(clip: ClipFeatures, encoder: STDEncoder, cfg: AttentionConfig | None = None) -> EncoderOutput:
    cfg = cfg or encoder.cfg
    if clip.radius != cfg.radius:
        raise ConfigError(f"clip radius {clip.radius} != config radius {cfg.radius}")
    levels = [m[None] for m in clip.stacked()]
    return encoder(levels)


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(module: nn.Module, path, config: dict, extra: dict | None = None) -> Path:
    """Named tensors in ``<path>.npz`` plus a JSON snapshot in ``<path>.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}
    np.savez(path.with_suffix(".npz"), **tensors)
    meta = {"config": config, **(extra or {})}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path.with_suffix(".npz")


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict]:
    path = Path(path)
    with np.load(path.with_suffix(".npz")) as data:
        state = {k: torch.from_numpy(data[k].copy()) for k in data.files}
    meta = json.loads(path.with_suffix(".json").read_text())
    return state, meta


def config_dict(cfg) -> dict:
    return asdict(cfg)

"""Multi-scale feature pyramids and the sampling primitives built on them.

Coordinate conventions used throughout the package:

* normalized points ``(x, y)`` in ``[0, 1]^2``; ``x`` runs along the width;
* level-pixel points are ``(x * W_l, y * H_l)``;
* integer level-pixel coordinate ``(i, j)`` addresses the *center* of texel
  ``(column i, row j)``; samples outside the map read zeros.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn


class FrameTooSmallError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureLevel:
    data: torch.Tensor  # (C, H, W)
    level_index: int
    stride: int

    def __post_init__(self):
        if self.data.dim() != 3:
            raise ValueError(f"level data must be C x H x W, got {tuple(self.data.shape)}")
        if self.height < 2 or self.width < 2:
            raise ValueError(f"level {self.level_index} is {self.height}x{self.width}; need >= 2x2")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def channels(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class FeaturePyramid:
    levels: tuple[FeatureLevel, ...]
    frame_index: int = 0

    def __post_init__(self):
        if not self.levels:
            raise ValueError("pyramid needs at least one level")
        channels = {lvl.channels for lvl in self.levels}
        if len(channels) != 1:
            raise ValueError(f"levels disagree on channel count: {sorted(channels)}")
        for a, b in zip(self.levels, self.levels[1:]):
            if b.height != math.ceil(a.height / 2) or b.width != math.ceil(a.width / 2):
                raise ValueError("successive levels must halve the spatial resolution")

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [(lvl.height, lvl.width) for lvl in self.levels]

    def tensors(self) -> list[torch.Tensor]:
        return [lvl.data for lvl in self.levels]


@dataclass(frozen=True)
class ClipFeatures:
    """Pyramids for frames ``center - radius .. center + radius``."""

    pyramids: tuple[FeaturePyramid, ...]
    center: int
    radius: int

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("window radius must be >= 0")
        if len(self.pyramids) != 2 * self.radius + 1:
            raise ValueError(f"expected {2 * self.radius + 1} pyramids, got {len(self.pyramids)}")
        ref = self.pyramids[0]
        for p in self.pyramids[1:]:
            if p.shapes != ref.shapes or p.levels[0].channels != ref.levels[0].channels:
                raise ValueError("pyramids in a clip must share level shapes and channels")

    def stacked(self) -> list[torch.Tensor]:
        """Per level, a ``(T, C, H, W)`` tensor ordered by frame."""
        return [torch.stack([p.levels[l].data for p in self.pyramids])
                for l in range(self.pyramids[0].num_levels)]


# -- sampling primitives ----------------------------------------------------

def rescale_point(point: Sequence[float], level: FeatureLevel) -> tuple[float, float]:
    x, y = float(point[0]), float(point[1])
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise ValueError(f"normalized point outside [0,1]^2: {(x, y)}")
    return (x * level.width, y * level.height)


def rescale_points(points: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Tensor form of `rescale_point` without the range check (``(..., 2)``)."""
    scale = points.new_tensor([width, height])
    return points * scale


def bilinear_gather(maps: torch.Tensor, points: torch.Tensor) -> torch.Tensor:
    """Batched bilinear lookup with zero padding.

    maps: ``(B, D, H, W)``; points: ``(B, P, 2)`` level-pixel ``(x, y)``.
    Returns ``(B, P, D)``. Differentiable in both arguments.
    """
    B, D, H, W = maps.shape
    P = points.shape[1]
    flat = maps.reshape(B, D, H * W)
    x, y = points[..., 0], points[..., 1]
    x0, y0 = torch.floor(x), torch.floor(y)
    fx, fy = x - x0, y - y0
    out = maps.new_zeros(B, D, P)
    for dx, wx in ((0, 1 - fx), (1, fx)):
        for dy, wy in ((0, 1 - fy), (1, fy)):
            xi, yi = x0 + dx, y0 + dy
            valid = (xi >= 0) & (xi <= W - 1) & (yi >= 0) & (yi <= H - 1)
            idx = (yi.clamp(0, H - 1) * W + xi.clamp(0, W - 1)).long()
            vals = torch.gather(flat, 2, idx[:, None, :].expand(B, D, P))
            out = out + vals * (wx * wy * valid)[:, None, :]
    return out.transpose(1, 2)


def bilinear_sample(level: FeatureLevel | torch.Tensor, point) -> torch.Tensor:
    """Sample one C-vector at a level-pixel point (texel-center convention)."""
    data = level.data if isinstance(level, FeatureLevel) else level
    pt = torch.as_tensor(point, dtype=data.dtype).reshape(1, 1, 2)
    return bilinear_gather(data[None], pt)[0, 0]


# -- toy backbone -------------------------------------------------------------

class Backbone(nn.Module):
    """Small strided conv stack producing ``num_levels`` maps of width ``channels``.

    A stem of stride-2 convs reaches ``first_stride / 2``; each level block
    then halves resolution once more, so the levels sit at strides
    ``first_stride * 2**l``.
    """

    def __init__(self, channels: int = 64, num_levels: int = 3, first_stride: int = 8,
                 hidden: int | None = None):
        super().__init__()
        if first_stride < 2 or first_stride & (first_stride - 1):
            raise ValueError("first_stride must be a power of two >= 2")
        hidden = hidden or channels
        self.first_stride = first_stride
        self.num_levels = num_levels
        stem, c_in = [], 3
        for _ in range(int(math.log2(first_stride)) - 1):
            stem += [nn.Conv2d(c_in, hidden, 3, stride=2, padding=1), nn.ReLU()]
            c_in = hidden
        self.stem = nn.Sequential(*stem)
        self.blocks = nn.ModuleList()
        self.proj = nn.ModuleList()
        for _ in range(num_levels):
            self.blocks.append(nn.Sequential(nn.Conv2d(c_in, hidden, 3, stride=2, padding=1), nn.ReLU(),
                                             nn.Conv2d(hidden, hidden, 3, padding=1), nn.ReLU()))
            self.proj.append(nn.Conv2d(hidden, channels, 1))
            c_in = hidden

    @property
    def strides(self) -> list[int]:
        return [self.first_stride * 2 ** l for l in range(self.num_levels)]

    def level_shapes(self, height: int, width: int) -> list[tuple[int, int]]:
        h, w = height, width
        for _ in range(int(math.log2(self.first_stride))):
            h, w = math.ceil(h / 2), math.ceil(w / 2)
        shapes = [(h, w)]
        for _ in range(self.num_levels - 1):
            h, w = math.ceil(h / 2), math.ceil(w / 2)
            shapes.append((h, w))
        return shapes

    def check_size(self, height: int, width: int) -> None:
        shapes = self.level_shapes(height, width)
        if min(min(s) for s in shapes) < 2:
            raise FrameTooSmallError(
                f"{height}x{width} frame gives level shapes {shapes}; every level needs >= 2x2")

    def forward(self, images: torch.Tensor) -> list[torch.Tensor]:
        """images: ``(B, 3, H, W)`` in [0, 1]. Returns per-level ``(B, C, H_l, W_l)``."""
        self.check_size(images.shape[-2], images.shape[-1])
        x = self.stem(images)
        out = []
        for block, proj in zip(self.blocks, self.proj):
            x = block(x)
            out.append(proj(x))
        return out


def frame_to_tensor(frame: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """``H x W x 3`` uint8 (or float in [0,1]) image to a ``3 x H x W`` tensor."""
    arr = np.asarray(frame)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {arr.shape}")
    t = torch.as_tensor(arr).permute(2, 0, 1).to(dtype)
    return t / 255.0 if arr.dtype == np.uint8 else t


def extract_pyramid(frame: np.ndarray, backbone: Backbone, frame_index: int = 0) -> FeaturePyramid:
    dtype = next(backbone.parameters()).dtype
    img = frame_to_tensor(frame, dtype)
    backbone.check_size(img.shape[1], img.shape[2])
    with torch.no_grad():
        maps = backbone(img[None])
    levels = tuple(FeatureLevel(m[0], l, s) for l, (m, s) in enumerate(zip(maps, backbone.strides)))
    return FeaturePyramid(levels, frame_index)


# -- debug dump ---------------------------------------------------------------

def save_pyramid(pyramid: FeaturePyramid, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"frame_index": pyramid.frame_index, "levels": []}
    for lvl in pyramid.levels:
        name = f"level{lvl.level_index}.npy"
        np.save(directory / name, lvl.data.detach().cpu().numpy())
        manifest["levels"].append({"file": name, "shape": list(lvl.data.shape),
                                   "stride": lvl.stride, "level_index": lvl.level_index})
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory


def load_pyramid(directory) -> FeaturePyramid:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    levels = []
    for entry in manifest["levels"]:
        data = torch.from_numpy(np.load(directory / entry["file"]))
        if list(data.shape) != entry["shape"]:
            raise ValueError(f"{entry['file']}: shape {list(data.shape)} != manifest {entry['shape']}")
        levels.append(FeatureLevel(data, entry["level_index"], entry["stride"]))
    return FeaturePyramid(tuple(levels), manifest["frame_index"])

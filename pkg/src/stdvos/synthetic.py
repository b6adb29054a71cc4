"""Toy videos of moving, deforming shapes with exact ground truth.

Objects move linearly (bouncing off the frame edges so they stay fully in
view) while their width and height oscillate sinusoidally. Masks are hard
binary rasterizations; with occlusion enabled, lower object indices are drawn
in front and each GT mask keeps only the visible pixels while the GT box
still bounds the full shape.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np
from PIL import Image

from .attention import ConfigError
from .geometry import Box

_PALETTE = [(230, 60, 60), (60, 200, 80), (70, 110, 240), (240, 200, 40),
            (200, 80, 220), (40, 210, 210), (250, 140, 40), (150, 150, 150)]


class FormatError(ValueError):
    pass


@dataclass
class ObjectSpec:
    shape: str = "rectangle"
    size_range: tuple[float, float] = (10.0, 20.0)
    max_speed: float = 2.0
    deform_amplitude: float = 0.15
    deform_period: float = 16.0
    color: Optional[tuple[int, int, int]] = None
    # explicit overrides, in pixels; sampled from the seed when None
    size: Optional[tuple[float, float]] = None
    position: Optional[tuple[float, float]] = None
    velocity: Optional[tuple[float, float]] = None

    def validate(self, height: int, width: int) -> None:
        if self.shape not in ("rectangle", "ellipse"):
            raise ConfigError(f"objects.shape: unknown shape {self.shape!r}")
        lo, hi = self.size_range
        if not 1 <= lo <= hi or hi > min(height, width) / 2:
            raise ConfigError(f"objects.size_range: invalid range {self.size_range} for {height}x{width}")
        if self.max_speed < 0:
            raise ConfigError("objects.max_speed must be >= 0")
        if not 0 <= self.deform_amplitude < 1:
            raise ConfigError("objects.deform_amplitude must lie in [0, 1)")
        if self.deform_period <= 0:
            raise ConfigError("objects.deform_period must be > 0")
        if self.size is not None and (min(self.size) < 1 or self.size[0] > width or self.size[1] > height):
            raise ConfigError(f"objects.size {self.size} does not fit the frame")


@dataclass
class SceneSpec:
    height: int = 64
    width: int = 64
    n_frames: int = 16
    objects: list[ObjectSpec] = field(default_factory=lambda: [ObjectSpec(), ObjectSpec()])
    occlusion: bool = False
    background: str = "gradient"
    seed: int = 0

    def validate(self) -> None:
        if self.height < 8 or self.width < 8:
            raise ConfigError(f"frame size {self.height}x{self.width} is too small")
        if self.n_frames < 2:
            raise ConfigError(f"n_frames must be >= 2, got {self.n_frames}")
        if not 1 <= len(self.objects) <= 8:
            raise ConfigError(f"objects: need 1-8 objects, got {len(self.objects)}")
        if self.background not in ("solid", "gradient"):
            raise ConfigError(f"background must be 'solid' or 'gradient', got {self.background!r}")
        for obj in self.objects:
            obj.validate(self.height, self.width)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scene keys: {sorted(unknown)}")
        obj_known = {f.name for f in fields(ObjectSpec)}
        objects = []
        for i, o in enumerate(data.pop("objects", [{}, {}])):
            bad = set(o) - obj_known
            if bad:
                raise ConfigError(f"objects[{i}]: unknown keys {sorted(bad)}")
            o = {k: tuple(v) if isinstance(v, list) else v for k, v in o.items()}
            objects.append(ObjectSpec(**o))
        spec = cls(objects=objects, **data)
        spec.validate()
        return spec


@dataclass
class SyntheticVideo:
    frames: np.ndarray  # (T, H, W, 3) uint8
    masks: np.ndarray  # (K, T, H, W) bool, visible region
    boxes: np.ndarray  # (K, T, 4) pixel corners x0, y0, x1, y1 of the full shape
    ids: list[int]
    spec: SceneSpec

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    def box(self, obj: int, t: int) -> Box:
        H, W = self.size
        return Box.from_pixels(*self.boxes[obj, t], width=W, height=H)

    def normalized_boxes(self, t: int) -> np.ndarray:
        """Center-size normalized GT boxes ``(K, 4)`` at frame t."""
        return np.array([self.box(k, t).to_list() for k in range(len(self.ids))])

    def present(self, obj: int, t: int) -> bool:
        return bool(self.masks[obj, t].any())


def tight_box(mask: np.ndarray) -> tuple[int, int, int, int] | None:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return None
    return (int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def _rasterize(shape: str, cx: float, cy: float, w: float, h: float, H: int, W: int):
    """Full-shape mask and its pixel corner box."""
    if shape == "rectangle":
        wi, hi = max(1, int(round(w))), max(1, int(round(h)))
        x0, y0 = int(round(cx - wi / 2)), int(round(cy - hi / 2))
        x0, y0 = min(max(x0, 0), W - wi), min(max(y0, 0), H - hi)
        mask = np.zeros((H, W), bool)
        mask[y0:y0 + hi, x0:x0 + wi] = True
        return mask, (x0, y0, x0 + wi, y0 + hi)
    ys, xs = np.mgrid[0:H, 0:W]
    mask = ((xs + 0.5 - cx) / (w / 2)) ** 2 + ((ys + 0.5 - cy) / (h / 2)) ** 2 <= 1.0
    if not mask.any():
        mask[min(max(int(cy), 0), H - 1), min(max(int(cx), 0), W - 1)] = True
    return mask, tight_box(mask)


def _bounce(p0: float, v: float, t: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if hi <= lo:
        return np.full(t.shape, (lo + hi) / 2)
    span = hi - lo
    x = np.mod(p0 - lo + v * t, 2 * span)
    return lo + np.where(x > span, 2 * span - x, x)


def _trajectory(obj: ObjectSpec, rng: np.random.Generator, H: int, W: int, T: int):
    if obj.size is not None:
        w0, h0 = obj.size
    else:
        w0, h0 = rng.uniform(*obj.size_range, size=2)
    amp = obj.deform_amplitude
    phase = rng.uniform(0, 2 * np.pi)
    t = np.arange(T, dtype=float)
    ws = w0 * (1 + amp * np.sin(2 * np.pi * t / obj.deform_period + phase))
    hs = h0 * (1 + amp * np.sin(2 * np.pi * t / obj.deform_period + phase + np.pi / 2))
    wmax, hmax = w0 * (1 + amp), h0 * (1 + amp)
    if obj.position is not None:
        px, py = obj.position
    else:
        px = rng.uniform(wmax / 2, W - wmax / 2)
        py = rng.uniform(hmax / 2, H - hmax / 2)
    if obj.velocity is not None:
        vx, vy = obj.velocity
    else:
        vx, vy = rng.uniform(-obj.max_speed, obj.max_speed, size=2)
    xs = _bounce(px, vx, t, wmax / 2, W - wmax / 2)
    ys = _bounce(py, vy, t, hmax / 2, H - hmax / 2)
    return xs, ys, ws, hs


def _background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    H, W = spec.height, spec.width
    base = rng.integers(20, 70, size=3)
    if spec.background == "solid":
        return np.broadcast_to(base, (H, W, 3)).astype(np.uint8).copy()
    ramp = np.linspace(0, 40, W)[None, :, None] + np.linspace(0, 20, H)[:, None, None]
    return np.clip(base[None, None, :] + ramp, 0, 255).astype(np.uint8)


def _boxes_overlap(boxes: np.ndarray) -> bool:
    # without occlusion, objects keep disjoint bounding boxes (and hence masks)
    lo = np.maximum(boxes[:, None, :, :2], boxes[None, :, :, :2])
    hi = np.minimum(boxes[:, None, :, 2:], boxes[None, :, :, 2:])
    inter = np.all(hi > lo, axis=-1)
    K = boxes.shape[0]
    inter[np.arange(K), np.arange(K)] = False
    return bool(inter.any())


def generate(spec: SceneSpec, max_attempts: int = 200) -> SyntheticVideo:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    H, W, T, K = spec.height, spec.width, spec.n_frames, len(spec.objects)
    background = _background(spec, rng)
    for _ in range(max_attempts):
        full = np.zeros((K, T, H, W), bool)
        boxes = np.zeros((K, T, 4), int)
        for k, obj in enumerate(spec.objects):
            xs, ys, ws, hs = _trajectory(obj, rng, H, W, T)
            for t in range(T):
                full[k, t], boxes[k, t] = _rasterize(obj.shape, xs[t], ys[t], ws[t], hs[t], H, W)
        if spec.occlusion or K == 1 or not _boxes_overlap(boxes):
            break
        if all(o.position is not None and o.velocity is not None and o.size is not None
               for o in spec.objects):
            break
    else:
        raise ConfigError("could not place non-overlapping objects; enable occlusion or shrink objects")
    if not spec.occlusion and _boxes_overlap(boxes):
        raise ConfigError("objects overlap but occlusion is disabled")
    visible = full.copy()
    frames = np.repeat(background[None], T, axis=0)
    for k in range(K - 1, -1, -1):
        color = spec.objects[k].color or _PALETTE[k % len(_PALETTE)]
        frames[full[k]] = color
        if spec.occlusion:
            in_front = full[:k].any(axis=0) if k else np.zeros_like(full[k])
            visible[k] &= ~in_front
    return SyntheticVideo(frames, visible, boxes, list(range(1, K + 1)), spec)


# -- persistence --------------------------------------------------------------

def annotation_schema() -> dict:
    return json.loads(resources.files("stdvos").joinpath("schemas/annotations.schema.json").read_text())


def save(video: SyntheticVideo, directory) -> Path:
    directory = Path(directory)
    (directory / "frames").mkdir(parents=True, exist_ok=True)
    for t in range(video.n_frames):
        Image.fromarray(video.frames[t]).save(directory / "frames" / f"{t:05d}.png")
    for k, obj_id in enumerate(video.ids):
        obj_dir = directory / "masks" / f"obj{obj_id:02d}"
        obj_dir.mkdir(parents=True, exist_ok=True)
        for t in range(video.n_frames):
            Image.fromarray(video.masks[k, t].astype(np.uint8) * 255).save(obj_dir / f"{t:05d}.png")
    H, W = video.size
    annotations = {
        "height": H, "width": W, "n_frames": video.n_frames,
        "objects": [{"id": obj_id,
                     "boxes": [[int(v) for v in video.boxes[k, t]] for t in range(video.n_frames)]}
                    for k, obj_id in enumerate(video.ids)],
        "spec": video.spec.to_dict(),
    }
    (directory / "annotations.json").write_text(json.dumps(annotations, indent=1))
    return directory


def _read_png(path: Path, mode: str) -> np.ndarray:
    if not path.is_file():
        raise FormatError(f"missing file: {path}")
    try:
        with Image.open(path) as img:
            if img.mode != mode:
                raise FormatError(f"{path}: expected PNG mode {mode}, got {img.mode}")
            return np.array(img)
    except FormatError:
        raise
    except Exception as exc:
        raise FormatError(f"corrupt image {path}: {exc}") from exc


def load(directory) -> SyntheticVideo:
    directory = Path(directory)
    ann_path = directory / "annotations.json"
    if not ann_path.is_file():
        raise FormatError(f"missing file: {ann_path}")
    try:
        ann = json.loads(ann_path.read_text())
        jsonschema.validate(ann, annotation_schema())
    except (json.JSONDecodeError, jsonschema.ValidationError) as exc:
        raise FormatError(f"invalid annotations {ann_path}: {exc}") from exc
    T, H, W = ann["n_frames"], ann["height"], ann["width"]
    frames = np.stack([_read_png(directory / "frames" / f"{t:05d}.png", "RGB") for t in range(T)])
    ids = [o["id"] for o in ann["objects"]]
    masks = np.stack([np.stack([_read_png(directory / "masks" / f"obj{i:02d}" / f"{t:05d}.png", "L") > 0
                                for t in range(T)]) for i in ids]) if ids else np.zeros((0, T, H, W), bool)
    if frames.shape != (T, H, W, 3) or masks.shape[2:] != (H, W):
        raise FormatError(f"{directory}: image sizes disagree with annotations.json")
    boxes = np.array([o["boxes"] for o in ann["objects"]], dtype=int).reshape(len(ids), T, 4)
    return SyntheticVideo(frames, masks, boxes, ids, SceneSpec.from_dict(ann["spec"]))


# -- datasets -----------------------------------------------------------------

@dataclass
class DatasetSpec:
    num_videos: int = 10
    seed: int = 0
    scene: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetSpec":
        unknown = set(data) - {"num_videos", "seed", "scene"}
        if unknown:
            raise ConfigError(f"unknown dataset keys: {sorted(unknown)}")
        out = cls(**data)
        if out.num_videos < 1:
            raise ConfigError(f"num_videos must be >= 1, got {out.num_videos}")
        SceneSpec.from_dict({**out.scene, "seed": 0})
        return out

    def scene_spec(self, index: int) -> SceneSpec:
        return SceneSpec.from_dict({**self.scene, "seed": self.seed * 100003 + index})


def generate_dataset(spec: DatasetSpec, out_dir=None) -> list[SyntheticVideo]:
    videos = [generate(spec.scene_spec(i)) for i in range(spec.num_videos)]
    if out_dir is not None:
        out_dir = Path(out_dir)
        for i, v in enumerate(videos):
            save(v, out_dir / f"video{i:04d}")
        (out_dir / "dataset.json").write_text(json.dumps(asdict(spec), indent=1, sort_keys=True))
    return videos


def load_dataset(directory) -> list[SyntheticVideo]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FormatError(f"missing dataset directory: {directory}")
    dirs = sorted(p for p in directory.iterdir() if p.is_dir() and (p / "annotations.json").exists())
    if not dirs:
        raise FormatError(f"no videos found under {directory}")
    return [load(d) for d in dirs]


def easy_scene(seed: int, n_objects: int = 2, n_frames: int = 16, size: int = 64) -> SceneSpec:
    """Well-separated, non-occluding objects used by the end-to-end checks."""
    objects = [ObjectSpec(shape="rectangle" if k % 2 == 0 else "ellipse",
                          size_range=(size * 0.18, size * 0.3), max_speed=size / 48,
                          deform_amplitude=0.15)
               for k in range(n_objects)]
    return SceneSpec(height=size, width=size, n_frames=n_frames, objects=objects, seed=seed)

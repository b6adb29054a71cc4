"""Box prompts from trajectories, and the segmenters that consume them.

Two backends share one contract, ``segment(image, box) -> mask``:

* `OracleSegmenter` clips the ground-truth mask to the prompt box. A tight
  box returns the full object; an undersized or shifted box truncates it.
* `RemoteSegmenter` speaks a small JSON-over-HTTP protocol to an external
  promptable-segmentation service (see `stdvos.stub_server` for a reference
  server).

Wire protocol::

    POST <endpoint>/segment
    {"image": "<base64 PNG>", "box": [x0, y0, x1, y1]}      # pixel corners
    -> 200 {"mask": {"size": [H, W], "counts": [...]}, "score": float}

Masks travel as uncompressed COCO-style run-length encodings: the mask is
flattened column-major (Fortran order), ``counts`` alternates run lengths of
0s and 1s starting with 0s (so it may begin with a 0-length run), and the
counts sum to ``H * W``.
"""
from __future__ import annotations

import base64
import io
import json
import logging
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from PIL import Image

from .association import Trajectory
from .geometry import Box, clip_cxcywh, iou

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoxPrompt:
    frame: int
    track_id: int
    box: Box


@dataclass
class Mask:
    data: np.ndarray  # (H, W) bool
    frame: int
    track_id: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=bool)
        if self.data.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {self.data.shape}")


class Segmenter(Protocol):
    def segment(self, image: np.ndarray, box: Box) -> np.ndarray: ...


# -- prompts ------------------------------------------------------------------

def prompts_from_trajectories(trajectories: Sequence[Trajectory]) -> list[BoxPrompt]:
    prompts = [BoxPrompt(e.frame, t.id, e.box) for t in trajectories for e in t.entries]
    prompts.sort(key=lambda p: (p.frame, p.track_id))
    seen = set()
    for p in prompts:
        if (p.frame, p.track_id) in seen:
            raise ValueError(f"duplicate prompt for frame {p.frame}, track {p.track_id}")
        seen.add((p.frame, p.track_id))
    return prompts


def jitter_box(box: Box, sigma: float, rng: np.random.Generator) -> Box:
    n = rng.standard_normal(4)
    cx, cy = box.cx + sigma * n[0], box.cy + sigma * n[1]
    w, h = box.w * np.exp(sigma * n[2]), box.h * np.exp(sigma * n[3])
    return clip_cxcywh((min(max(cx, 0.0), 1.0), min(max(cy, 0.0), 1.0), w, h))


def jitter_prompts(prompts: Sequence[BoxPrompt], sigma: float, seed: int = 0) -> list[BoxPrompt]:
    """Perturb centers (additively) and log-sizes by N(0, sigma^2), clipped to the frame."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return list(prompts)
    rng = np.random.default_rng(seed)
    return [BoxPrompt(p.frame, p.track_id, jitter_box(p.box, sigma, rng)) for p in prompts]


# -- oracle backend -------------------------------------------------------------

def rasterize_box(box: Box, height: int, width: int) -> np.ndarray:
    """Pixels whose centers fall inside the box (closed interval)."""
    x0, y0, x1, y1 = box.to_pixels(width, height)
    xs = np.arange(width) + 0.5
    ys = np.arange(height) + 0.5
    return ((ys >= y0) & (ys <= y1))[:, None] & ((xs >= x0) & (xs <= x1))[None, :]


def oracle_segment(gt_mask: np.ndarray, prompt: Box) -> np.ndarray:
    gt_mask = np.asarray(gt_mask, dtype=bool)
    return gt_mask & rasterize_box(prompt, *gt_mask.shape)


class OracleSegmenter:
    """Clips the GT mask of the object the prompt box overlaps most.

    ``gt_masks``: ``(K, T, H, W)``; ``gt_boxes``: per object, per frame Box.
    """

    def __init__(self, gt_masks: np.ndarray, gt_boxes: Sequence[Sequence[Box]]):
        self.gt_masks = np.asarray(gt_masks, dtype=bool)
        self.gt_boxes = gt_boxes

    def segment_at(self, frame: int, box: Box) -> np.ndarray:
        K = self.gt_masks.shape[0]
        if K == 0:
            return np.zeros(self.gt_masks.shape[2:], bool)
        overlaps = [iou(box, self.gt_boxes[k][frame]) for k in range(K)]
        k = int(np.argmax(overlaps))
        if overlaps[k] <= 0:
            return np.zeros(self.gt_masks.shape[2:], bool)
        return oracle_segment(self.gt_masks[k, frame], box)

    def segment_prompts(self, frames: np.ndarray, prompts: Sequence[BoxPrompt]) -> list[Mask]:
        return [Mask(self.segment_at(p.frame, p.box), p.frame, p.track_id) for p in prompts]


# -- run-length encoding -------------------------------------------------------

def rle_encode(mask: np.ndarray) -> dict:
    mask = np.asarray(mask, dtype=bool)
    flat = mask.ravel(order="F").astype(np.int8)
    if flat.size == 0:
        return {"size": list(mask.shape), "counts": []}
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    counts = np.diff(bounds).tolist()
    if flat[0] == 1:
        counts = [0] + counts
    return {"size": [int(s) for s in mask.shape], "counts": [int(c) for c in counts]}


class ProtocolError(ValueError):
    pass


def rle_decode(rle: dict) -> np.ndarray:
    try:
        h, w = (int(v) for v in rle["size"])
        counts = [int(c) for c in rle["counts"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed RLE: {exc}") from exc
    if any(c < 0 for c in counts) or sum(counts) != h * w:
        raise ProtocolError(f"RLE counts sum to {sum(counts)}, expected {h * w}")
    values = np.arange(len(counts)) % 2
    flat = np.repeat(values, counts).astype(bool)
    return flat.reshape((h, w), order="F")


# -- remote backend ------------------------------------------------------------

class TransportError(ConnectionError):
    pass


class ServiceError(RuntimeError):
    def __init__(self, status: int, message: str = ""):
        super().__init__(f"segmentation service returned HTTP {status}: {message}")
        self.status = status


def encode_png(image: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_png(data: str) -> np.ndarray:
    return np.array(Image.open(io.BytesIO(base64.b64decode(data))).convert("RGB"))


class RemoteSegmenter:
    """Client for a remote box-prompt segmentation service."""

    def __init__(self, endpoint: str, retries: int = 2, timeout: float = 10.0, backoff: float = 0.05,
                 max_in_flight: int = 4, resize_short_side: int | None = None):
        self.endpoint = endpoint.rstrip("/")
        self.retries, self.timeout, self.backoff = retries, timeout, backoff
        self.max_in_flight = max(1, max_in_flight)
        self.resize_short_side = resize_short_side

    def _post(self, payload: dict) -> dict:
        body = json.dumps(payload).encode()
        last_exc: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            req = urllib.request.Request(self.endpoint + "/segment", data=body, method="POST",
                                         headers={"Content-Type": "application/json"})
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    raw = resp.read()
            except urllib.error.HTTPError as exc:
                detail = exc.read().decode(errors="replace")[:200]
                last_exc = ServiceError(exc.code, detail)
                if exc.code < 500:
                    raise last_exc from None
                log.warning("segment attempt %d: HTTP %d", attempt + 1, exc.code)
                continue
            except (urllib.error.URLError, OSError) as exc:
                last_exc = TransportError(f"{self.endpoint}: {exc}")
                log.warning("segment attempt %d: %s", attempt + 1, exc)
                continue
            try:
                return json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ProtocolError(f"response is not JSON: {exc}") from exc
        raise last_exc

    def segment(self, image: np.ndarray, box: Box) -> np.ndarray:
        image = np.asarray(image)
        H, W = image.shape[:2]
        send, sh, sw = image, H, W
        if self.resize_short_side and min(H, W) != self.resize_short_side:
            scale = self.resize_short_side / min(H, W)
            sh, sw = max(1, round(H * scale)), max(1, round(W * scale))
            send = np.array(Image.fromarray(image.astype(np.uint8)).resize((sw, sh), Image.BILINEAR))
        reply = self._post({"image": encode_png(send), "box": list(box.to_pixels(sw, sh))})
        if not isinstance(reply, dict) or "mask" not in reply:
            raise ProtocolError("response lacks a 'mask' field")
        mask = rle_decode(reply["mask"])
        if mask.shape != (sh, sw):
            raise ProtocolError(f"mask size {mask.shape} != request image size {(sh, sw)}")
        if (sh, sw) != (H, W):
            mask = np.array(Image.fromarray(mask.astype(np.uint8)).resize((W, H), Image.NEAREST)) > 0
        return mask

    def segment_prompts(self, frames: np.ndarray, prompts: Sequence[BoxPrompt]) -> list[Mask]:
        """Up to ``max_in_flight`` concurrent requests; results keep prompt order."""
        def one(p: BoxPrompt) -> Mask:
            return Mask(self.segment(frames[p.frame], p.box), p.frame, p.track_id)

        if self.max_in_flight == 1:
            return [one(p) for p in prompts]
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(one, prompts))

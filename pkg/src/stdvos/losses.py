"""Training objective: set matching, focal classification, box and contrastive losses."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
import torch
import torch.nn.functional as F

from .assignment import solve_assignment
from .attention import ConfigError
from .geometry import box_cxcywh_to_xyxy_t, generalized_box_iou_t, paired_giou_t


class CapacityError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.1
    cls_weight: float = 2.0
    l1_weight: float = 5.0
    giou_weight: float = 2.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    use_contrastive: bool = True

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        for name in ("cls_weight", "l1_weight", "giou_weight", "focal_gamma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 <= self.focal_alpha <= 1.0:
            raise ConfigError("focal_alpha must lie in [0, 1]")

    @classmethod
    def from_dict(cls, data: dict) -> "LossConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown loss config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class MatchResult:
    """GT object index -> query index for one frame."""

    gt_to_query: dict[int, int]
    num_queries: int
    cost: float = 0.0

    @property
    def matched_queries(self) -> set[int]:
        return set(self.gt_to_query.values())

    def labels(self) -> np.ndarray:
        """1 for queries matched to an object, 0 (background) otherwise."""
        out = np.zeros(self.num_queries)
        out[list(self.matched_queries)] = 1.0
        return out


def match_cost(logits: torch.Tensor, boxes: torch.Tensor, gt_boxes: torch.Tensor,
               cfg: LossConfig) -> np.ndarray:
    """Cost matrix ``(num_gt, Q)``."""
    with torch.no_grad():
        prob = logits.sigmoid()
        l1 = torch.cdist(gt_boxes, boxes, p=1) / 4.0
        giou = generalized_box_iou_t(box_cxcywh_to_xyxy_t(gt_boxes), box_cxcywh_to_xyxy_t(boxes))
        cost = cfg.cls_weight * (-prob)[None, :] + cfg.l1_weight * l1 + cfg.giou_weight * (1 - giou)
    return cost.double().cpu().numpy()


def hungarian_match(logits, boxes, gt_boxes, cfg: LossConfig | None = None) -> MatchResult:
    cfg = cfg or LossConfig()
    logits = torch.as_tensor(logits)
    boxes = torch.as_tensor(boxes)
    gt_boxes = torch.as_tensor(gt_boxes, dtype=boxes.dtype).reshape(-1, 4)
    Q = boxes.shape[0]
    if gt_boxes.shape[0] > Q:
        raise CapacityError(f"{gt_boxes.shape[0]} ground-truth objects exceed {Q} queries")
    if gt_boxes.shape[0] == 0:
        return MatchResult({}, Q)
    return match_from_cost(match_cost(logits, boxes, gt_boxes, cfg), Q)


def match_from_cost(cost: np.ndarray, num_queries: int | None = None) -> MatchResult:
    cost = np.asarray(cost, dtype=float)
    if cost.shape[0] > cost.shape[1]:
        raise CapacityError(f"{cost.shape[0]} ground-truth objects exceed {cost.shape[1]} queries")
    pairs = solve_assignment(cost)
    total = float(sum(cost[r, c] for r, c in pairs))
    return MatchResult(dict(pairs), num_queries or cost.shape[1], total)


def focal_loss(logits: torch.Tensor, targets: torch.Tensor, alpha: float = 0.25,
               gamma: float = 2.0) -> torch.Tensor:
    """Sigmoid focal loss averaged over every (query, class) slot.

    ``alpha`` weights positives and ``1 - alpha`` negatives; pass ``alpha=0.5``
    and ``gamma=0`` to recover half the binary cross-entropy, or ``alpha=None``
    for no class weighting.
    """
    targets = targets.to(logits.dtype)
    p = logits.sigmoid()
    ce = F.binary_cross_entropy_with_logits(logits, targets, reduction="none")
    p_t = p * targets + (1 - p) * (1 - targets)
    loss = ce * (1 - p_t) ** gamma if gamma else ce
    if alpha is not None:
        loss = (alpha * targets + (1 - alpha) * (1 - targets)) * loss
    return loss.mean()


def infonce(anchors: torch.Tensor, candidates: torch.Tensor, positives=None, tau: float = 0.1,
            candidate_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Contrastive loss between two frames' embeddings.

    ``anchors`` ``(A, E)`` from frame t, ``candidates`` ``(N, E)`` from frame t'.
    ``positives[i]`` indexes the candidate that is the same instance as anchor
    ``i`` (default: identity, the plain two-frame form with A == N). Every other
    candidate kept by ``candidate_mask`` is a negative.
    """
    if tau <= 0:
        raise ConfigError(f"temperature must be > 0, got {tau}")
    if anchors.shape[0] == 0:
        return anchors.new_zeros(())
    if positives is None:
        positives = torch.arange(anchors.shape[0])
    positives = torch.as_tensor(positives, dtype=torch.long)
    sim = F.normalize(anchors, dim=-1) @ F.normalize(candidates, dim=-1).T / tau
    if candidate_mask is not None:
        keep = torch.as_tensor(candidate_mask, dtype=torch.bool).clone()
        keep[positives] = True
        sim = sim.masked_fill(~keep[None, :], float("-inf"))
    log_prob = sim - torch.logsumexp(sim, dim=1, keepdim=True)
    return -log_prob[torch.arange(anchors.shape[0]), positives].mean()


def box_regression_loss(pred: torch.Tensor, gt: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Mean over matched pairs of ``l1_weight * L1 + giou_weight * (1 - GIoU)``."""
    if pred.shape[0] == 0:
        return pred.sum() * 0.0
    l1 = (pred - gt).abs().mean(-1)
    giou = paired_giou_t(box_cxcywh_to_xyxy_t(pred), box_cxcywh_to_xyxy_t(gt))
    return (cfg.l1_weight * l1 + cfg.giou_weight * (1 - giou)).mean()


def total_loss(cls_loss, box_loss, cl_loss, cfg: LossConfig | None = None):
    cfg = cfg or LossConfig()
    for name, v in (("cls", cls_loss), ("box", box_loss), ("cl", cl_loss)):
        val = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        if not math.isfinite(val):
            raise NumericError(f"non-finite {name} loss: {val}")
    return cfg.cls_weight * cls_loss + box_loss + cl_loss


@dataclass
class FrameTargets:
    boxes: torch.Tensor  # (G, 4) center-size
    ids: list[int] = field(default_factory=list)


def clip_pair_loss(out_t: dict, out_u: dict, tgt_t: FrameTargets, tgt_u: FrameTargets,
                   cfg: LossConfig) -> dict:
    """Full objective for one pair of frames decoded from their own clips.

    ``out_*`` hold ``logits (Q,)``, ``boxes (Q, 4)`` and ``reid (Q, E)``.
    """
    parts = {"cls": 0.0, "box": 0.0}
    matches = []
    for out, tgt in ((out_t, tgt_t), (out_u, tgt_u)):
        match = hungarian_match(out["logits"], out["boxes"], tgt.boxes, cfg)
        matches.append(match)
        labels = torch.as_tensor(match.labels(), dtype=out["logits"].dtype)
        parts["cls"] = parts["cls"] + focal_loss(out["logits"], labels, cfg.focal_alpha, cfg.focal_gamma)
        gt_idx = sorted(match.gt_to_query)
        q_idx = [match.gt_to_query[g] for g in gt_idx]
        parts["box"] = parts["box"] + box_regression_loss(out["boxes"][q_idx], tgt.boxes[gt_idx], cfg)
    parts["cls"] = parts["cls"] / 2
    parts["box"] = parts["box"] / 2
    parts["cl"] = out_t["logits"].new_zeros(())
    if cfg.use_contrastive:
        parts["cl"] = identity_infonce(out_t["reid"], out_u["reid"], matches[0], matches[1],
                                       tgt_t.ids, tgt_u.ids, cfg.tau)
    parts["total"] = total_loss(parts["cls"], parts["box"], parts["cl"], cfg)
    return parts


def identity_infonce(reid_t, reid_u, match_t: MatchResult, match_u: MatchResult,
                     ids_t, ids_u, tau: float) -> torch.Tensor:
    """InfoNCE with positives paired through ground-truth identity.

    The anchor is the frame-t query matched to object ``k``; its positive is
    the frame-t' query matched to the same object. Candidates that matched no
    object in either frame are left out of the denominator.
    """
    q_of_u = {ids_u[g]: q for g, q in match_u.gt_to_query.items()}
    anchors, positives = [], []
    for g, q in sorted(match_t.gt_to_query.items()):
        obj = ids_t[g]
        if obj in q_of_u:
            anchors.append(q)
            positives.append(q_of_u[obj])
    if not anchors:
        return reid_t.new_zeros(())
    keep = torch.zeros(reid_u.shape[0], dtype=torch.bool)
    keep[list(match_t.matched_queries | match_u.matched_queries)] = True
    return infonce(reid_t[anchors], reid_u, positives, tau, keep)

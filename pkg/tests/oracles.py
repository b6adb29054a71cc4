"""Slow, loop-based reference implementations used as test oracles.

Nothing here imports the vectorized code paths it checks; inputs are plain
numpy arrays in float64.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def bilinear(fmap: np.ndarray, x: float, y: float) -> np.ndarray:
    """fmap (C, H, W); integer coordinates are texel centers; zero outside."""
    C, H, W = fmap.shape
    x0, y0 = math.floor(x), math.floor(y)
    out = np.zeros(C)
    for xi, wx in ((x0, 1 - (x - x0)), (x0 + 1, x - x0)):
        for yi, wy in ((y0, 1 - (y - y0)), (y0 + 1, y - y0)):
            if 0 <= xi < W and 0 <= yi < H:
                out += wx * wy * fmap[:, yi, xi]
    return out


def softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max())
    return e / e.sum()


def deformable_attention(z, ref, maps, params, n_heads, n_points):
    """One deformable branch written out per query, head, map and point.

    z (Q, C); ref (Q, 2) normalized; maps: list of (C, H, W).
    params: dict with W_off, b_off, W_a, b_a, W_val (C, C), W_out (C, C).
    The value projection of head m is applied to each bilinear sample, the
    output projection to the concatenated heads.
    """
    Q, C = z.shape
    G, M, K = len(maps), n_heads, n_points
    D = C // M
    out = np.zeros((Q, C))
    weights = np.zeros((Q, M, G, K))
    for q in range(Q):
        off = (params["W_off"] @ z[q] + params["b_off"]).reshape(M, G, K, 2)
        logits = (params["W_a"] @ z[q] + params["b_a"]).reshape(M, G * K)
        heads = []
        for m in range(M):
            a = softmax(logits[m]).reshape(G, K)
            weights[q, m] = a
            W_m = params["W_val"][m * D:(m + 1) * D]  # (D, C)
            acc = np.zeros(D)
            for g in range(G):
                _, H, W = maps[g].shape
                px, py = ref[q, 0] * W, ref[q, 1] * H
                for k in range(K):
                    sample = bilinear(maps[g], px + off[m, g, k, 0], py + off[m, g, k, 1])
                    acc += a[g, k] * (W_m @ sample)
            heads.append(acc)
        out[q] = params["W_out"] @ np.concatenate(heads)
    return out, weights


def branch_params(branch) -> dict:
    g = lambda t: t.detach().double().numpy()  # noqa: E731
    return {"W_off": g(branch.sampling_offsets.weight), "b_off": g(branch.sampling_offsets.bias),
            "W_a": g(branch.attention_logits.weight), "b_a": g(branch.attention_logits.bias),
            "W_val": g(branch.value_proj.weight), "W_out": g(branch.output_proj.weight)}


def brute_force_assignment(cost: np.ndarray) -> float:
    """Minimum total cost of a one-to-one assignment covering min(n, m) rows/cols."""
    n, m = cost.shape
    if n > m:
        cost, (n, m) = cost.T, (m, n)
    best = math.inf
    for cols in itertools.permutations(range(m), n):
        best = min(best, sum(cost[i, c] for i, c in enumerate(cols)))
    return best


def raster_iou(a, b, res: int = 400) -> float:
    """IoU of two xyxy boxes in [0, 1]^2 by counting grid cells."""
    xs = (np.arange(res) + 0.5) / res
    X, Y = np.meshgrid(xs, xs)

    def inside(box):
        return (X >= box[0]) & (X <= box[2]) & (Y >= box[1]) & (Y <= box[3])

    ia, ib = inside(a), inside(b)
    return (ia & ib).sum() / (ia | ib).sum()


def numeric_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function over every entry of x."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * eps)
    return grad

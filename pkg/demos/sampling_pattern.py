"""
Where deformable attention looks
================================

A fresh spatial branch does not attend everywhere. Each head samples a few
points on every pyramid level, spread along one compass direction at growing
distances. Training then bends these points towards the object edges.

This script draws the initial pattern for one query on a synthetic frame and
then the temporal branch's points on the two neighboring frames.
"""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from stdvos.attention import AttentionConfig, DeformableBranch
from stdvos.synthetic import easy_scene, generate

torch.set_grad_enabled(False)  # nothing here is trained

video = generate(easy_scene(3))
H, W = video.size
cfg = AttentionConfig(n_heads=4, n_levels=3, k_intra=4, k_inter=2, radius=1, channels=16)
print(f"frame {H}x{W}, {cfg.n_heads} heads, {cfg.n_levels} levels, {cfg.k_intra} points")

# %%
# One query sitting on the first object's box center.
box = video.box(0, 8)
ref = torch.tensor([[[box.cx, box.cy]]])
query = torch.zeros(1, 1, cfg.channels)

spatial = DeformableBranch(cfg.channels, cfg.n_heads, cfg.n_levels, cfg.k_intra)
offsets, weights = spatial.sampling(query)
print("weights per head sum to", weights.sum(dim=(-2, -1)).flatten().tolist())

# %%
# Offsets are in pixels of each level, so the same offset reaches further
# on a coarse level. Level l has a stride of 8 * 2**l here.
strides = [8 * 2 ** l for l in range(cfg.n_levels)]
fig, ax = plt.subplots(figsize=(4, 4))
ax.imshow(video.frames[8])
colors = plt.cm.tab10(np.arange(cfg.n_heads))
for l, stride in enumerate(strides):
    lw, lh = W / stride, H / stride
    pts = (ref[0, 0] * torch.tensor([lw, lh]) + offsets[0, 0, :, l]) * stride
    for m in range(cfg.n_heads):
        ax.scatter(pts[m, :, 0] - 0.5, pts[m, :, 1] - 0.5, s=12 + 10 * l, color=colors[m],
                   marker="osD"[l], edgecolor="k", linewidth=0.4)
ax.plot(box.cx * W - 0.5, box.cy * H - 0.5, "w+", ms=12)
ax.set_xlim(-0.5, W - 0.5)
ax.set_ylim(H - 0.5, -0.5)
ax.set_title("spatial sampling points at initialization")
fig.tight_layout()
fig.savefig("sampling_spatial.png")

# %%
# The temporal branch has one group per (neighbor frame, level) pair; the
# center frame is left to the spatial branch. With d=1 that is 2 * 3 groups
# and the softmax runs over all of them together.
temporal = DeformableBranch(cfg.channels, cfg.n_heads, 2 * cfg.radius * cfg.n_levels, cfg.k_inter)
_, tw = temporal.sampling(query)
print("temporal weights shape", tuple(tw.shape[2:]), "each", round(float(tw[0, 0, 0, 0, 0]), 4))

fig, axes = plt.subplots(1, 2, figsize=(7, 3.5))
t_offsets, _ = temporal.sampling(query)
for ax, (g0, t) in zip(axes, [(0, 7), (cfg.n_levels, 9)]):
    ax.imshow(video.frames[t])
    for l, stride in enumerate(strides):
        lw, lh = W / stride, H / stride
        pts = (ref[0, 0] * torch.tensor([lw, lh]) + t_offsets[0, 0, :, g0 + l]) * stride
        for m in range(cfg.n_heads):
            ax.scatter(pts[m, :, 0] - 0.5, pts[m, :, 1] - 0.5, s=12 + 10 * l, color=colors[m],
                       marker="osD"[l], edgecolor="k", linewidth=0.4)
    ax.set_title(f"frame {t}")
    ax.set_xlim(-0.5, W - 0.5)
    ax.set_ylim(H - 0.5, -0.5)
fig.tight_layout()
fig.savefig("sampling_temporal.png")
print("saved sampling_spatial.png and sampling_temporal.png")

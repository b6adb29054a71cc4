"""
Tracking, then prompting
========================

The whole chain on toy data: train the detector for a few hundred steps,
link its detections into trajectories, turn every trajectory box into a
prompt and score the masks the oracle segmenter returns.

A few hundred steps give rough boxes. The acceptance run trains for 2000
steps on 50 videos and reaches a prompt IoU of about 0.77. Pass a checkpoint
path (from ``stdvos train``) to skip training here.
"""

import sys
from dataclasses import replace

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from stdvos.ablate import train_variant
from stdvos.config import ExperimentConfig
from stdvos.pipeline import run_video
from stdvos.synthetic import easy_scene, generate
from stdvos.train import TrainConfig, model_from_checkpoint

torch.set_num_threads(1)
cfg = ExperimentConfig()
cfg = replace(cfg, attention=replace(cfg.attention, radius=1),
              train=TrainConfig(steps=300, lr=5e-4, batch_size=4))

if len(sys.argv) > 1:
    model, _ = model_from_checkpoint(sys.argv[1])
else:
    train = [generate(easy_scene(1000 + i)) for i in range(20)]
    model = train_variant(cfg, train, log_path="demo_train.jsonl")

# %%
video = generate(easy_scene(5003))
result = run_video(video, "demo", model=model, tracker_cfg=cfg.tracker)
print(f"{len(result.trajectories)} trajectories, {result.id_switches} ID switches")
for obj, v in result.prompt_iou.items():
    print(f"object {obj}: prompt IoU {v:.3f}")
for o in result.objects:
    print(f"object {o.obj_id} <- track {o.track_id}: J {o.j_mean:.3f}  F {o.f_mean:.3f}")

# %%
# Tracked boxes (solid) against the truth (dashed) on four frames, with the
# segmented masks underneath.
H, W = video.size
frames = [0, 5, 10, 15]
fig, axes = plt.subplots(1, 4, figsize=(10, 2.8))
colors = plt.cm.tab10(np.arange(10))
for ax, t in zip(axes, frames):
    ax.imshow(video.frames[t])
    for m in result.masks:
        if m.frame == t:
            ax.imshow(np.ma.masked_where(~m.data, m.data), cmap="gray", alpha=0.5)
    for k in range(len(video.ids)):
        x0, y0, x1, y1 = video.boxes[k, t]
        ax.add_patch(plt.Rectangle((x0 - 0.5, y0 - 0.5), x1 - x0, y1 - y0, fill=False, ls="--", color="w"))
    for tr in result.trajectories:
        b = tr.box_at(t)
        if b is not None:
            x0, y0, x1, y1 = b.to_pixels(W, H)
            ax.add_patch(plt.Rectangle((x0 - 0.5, y0 - 0.5), x1 - x0, y1 - y0, fill=False,
                                       color=colors[tr.id % 10], lw=1.5))
    ax.set_title(f"frame {t}")
    ax.axis("off")
fig.tight_layout()
fig.savefig("track_and_segment.png")
print("saved track_and_segment.png")

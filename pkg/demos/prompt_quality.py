"""
How much does a sloppy box cost?
================================

The segmenter only sees boxes, so its masks can be no better than the boxes
the tracker hands it. Here the tracker is replaced by ground-truth boxes with
Gaussian noise of growing size, and the oracle segmenter clips each
object's true mask to the box it is given.
"""

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from stdvos.geometry import iou
from stdvos.pipeline import gt_trajectories, run_pipeline
from stdvos.segmenter import jitter_prompts, oracle_segment, prompts_from_trajectories
from stdvos.synthetic import easy_scene, generate

videos = [generate(easy_scene(300 + i)) for i in range(8)]
names = [f"v{i}" for i in range(8)]

# %%
# Centers move by sigma in normalized image units and the log of each side
# moves by sigma. Objects here span a fifth of the frame or so, which is
# why a small sigma already costs a lot of overlap.
prompts = prompts_from_trajectories(gt_trajectories(videos[0]))
for sigma in (0.05, 0.1, 0.2):
    noisy = jitter_prompts(prompts, sigma, seed=0)
    print(f"sigma {sigma:4}: mean prompt IoU {np.mean([iou(a.box, b.box) for a, b in zip(prompts, noisy)]):.3f}")

# %%
sigmas = [0.0, 0.025, 0.05, 0.1, 0.15, 0.2, 0.3]
rows = []
for sigma in sigmas:
    reps = [run_pipeline(videos, names, prompts_from_gt=True, jitter=sigma, seed=s)[0]
            for s in (range(5) if sigma else [0])]
    rows.append([np.mean([getattr(r, k) for r in reps]) for k in ("j_mean", "f_mean", "jf")])
    print(f"sigma {sigma:5}: J {rows[-1][0]:.3f}  F {rows[-1][1]:.3f}  J&F {rows[-1][2]:.3f}")
rows = np.array(rows)

fig, ax = plt.subplots(figsize=(4.5, 3))
for col, label in enumerate(("J", "F", "J&F")):
    ax.plot(sigmas, rows[:, col], marker="o", label=label)
ax.set_xlabel("box jitter sigma")
ax.set_ylabel("score")
ax.legend()
fig.tight_layout()
fig.savefig("prompt_quality.png")

# %%
# One object under three noise levels. The mask shrinks to whatever part
# of the object the box still covers.
video = videos[0]
gt = video.masks[0, 5]
fig, axes = plt.subplots(1, 3, figsize=(7.5, 2.6))
for ax, sigma in zip(axes, (0.0, 0.1, 0.3)):
    p = jitter_prompts([q for q in prompts if q.frame == 5 and q.track_id == 1], sigma, seed=2)[0]
    ax.imshow(gt, cmap="gray", alpha=0.35)
    ax.imshow(np.ma.masked_where(~oracle_segment(gt, p.box), gt), cmap="autumn", alpha=0.8)
    x0, y0, x1, y1 = p.box.to_pixels(*video.size[::-1])
    ax.add_patch(plt.Rectangle((x0 - 0.5, y0 - 0.5), x1 - x0, y1 - y0, fill=False, color="c", lw=1.5))
    ax.set_title(f"sigma {sigma}")
    ax.axis("off")
fig.tight_layout()
fig.savefig("prompt_examples.png")
print("saved prompt_quality.png and prompt_examples.png")

"""Ablation harness: one trained model per axis value, one table row each.

Axes and the table they are shaped like:

``d``        window radius; columns d, J&F, J-Mean, J-Recall, F-Mean, F-Recall
``k_inter``  temporal sampling points; columns K_inter, J&F, ... , F-Recall
``tcl``      contrastive ReID loss off/on, spatial-only encoder;
             columns Methods, J&F, J-Mean, F-Mean

Reference numbers from the published full-scale runs are kept in
`REFERENCE` for documentation. They are not targets: a 64x64 toy run
cannot be compared with a DAVIS-scale model.
"""
from __future__ import annotations

import csv
import io
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import torch  # noqa: E402

from .config import ExperimentConfig  # noqa: E402
from .metrics import TABLE_COLUMNS, EvalReport  # noqa: E402
from .model import STDNet  # noqa: E402
from .pipeline import run_pipeline  # noqa: E402
from .synthetic import SyntheticVideo  # noqa: E402
from .train import Trainer  # noqa: E402

AXES = ("d", "k_inter", "tcl")
HEADERS = {
    "d": ("d", *TABLE_COLUMNS),
    "k_inter": ("K_inter", *TABLE_COLUMNS),
    "tcl": ("Methods", "J&F", "J-Mean", "F-Mean"),
}
TCL_LABELS = {"off": "baseline", "on": "baseline + TCL"}

# full-scale published values (percent), documentation only
REFERENCE = {
    "d": {0: (78.8, 75.5, 82.7, 82.0, 89.4), 1: (79.7, 76.5, 84.0, 82.9, 90.5),
          2: (80.4, 77.4, 83.9, 83.4, 91.1), 3: (80.9, 77.5, 84.9, 84.2, 92.0),
          4: (81.1, 77.6, 85.2, 84.5, 92.3)},
    "k_inter": {0: (78.8, 75.5, 82.7, 82.0, 89.4), 1: (79.3, 75.9, 83.3, 82.6, 89.1),
                2: (79.9, 76.6, 83.9, 83.1, 90.6), 3: (80.4, 77.1, 84.4, 83.7, 91.9),
                4: (80.9, 77.5, 84.9, 84.2, 92.0), 5: (81.0, 77.6, 85.0, 84.4, 92.4),
                6: (80.8, 77.3, 84.9, 84.2, 92.1)},
    "tcl": {"off": (78.1, 74.5, 81.7), "on": (79.1, 75.8, 82.3)},
}


class AxisError(ValueError):
    """Unknown ablation axis or a value that does not belong to it."""


def parse_values(axis: str, raw: str | Sequence) -> list:
    if axis not in AXES:
        raise AxisError(f"unknown axis {axis!r}; expected one of {', '.join(AXES)}")
    items = [s.strip() for s in raw.split(",") if s.strip()] if isinstance(raw, str) else list(raw)
    if not items:
        raise AxisError("no values given")
    if axis == "tcl":
        bad = [v for v in items if v not in TCL_LABELS]
        if bad:
            raise AxisError(f"tcl values must be 'off' or 'on', got {bad}")
        return items
    try:
        values = [int(v) for v in items]
    except ValueError as exc:
        raise AxisError(f"{axis} values must be integers: {exc}") from exc
    if any(v < 0 for v in values):
        raise AxisError(f"{axis} values must be >= 0")
    return values


def variant(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "d":
        return replace(cfg, attention=replace(cfg.attention, radius=int(value)))
    if axis == "k_inter":
        return replace(cfg, attention=replace(cfg.attention, k_inter=int(value)))
    if axis == "tcl":
        # the two baseline rows use no temporal attention
        return replace(cfg, attention=replace(cfg.attention, radius=0),
                       loss=replace(cfg.loss, use_contrastive=value == "on"))
    raise AxisError(f"unknown axis {axis!r}")


def train_variant(cfg: ExperimentConfig, videos: Sequence[SyntheticVideo], log_path=None,
                  checkpoint=None) -> STDNet:
    torch.manual_seed(cfg.seed)
    model = STDNet(cfg.attention, cfg.model)
    trainer = Trainer(model, videos, cfg.loss, cfg.train, seed=cfg.seed)
    trainer.run(log_path=log_path)
    if checkpoint is not None:
        trainer.save(checkpoint)
    model.eval()
    return model


def table_row(axis: str, value, report: EvalReport) -> list[str]:
    row = report.row()
    if axis == "tcl":
        return [TCL_LABELS[value]] + [f"{row[c]:.6f}" for c in HEADERS["tcl"][1:]]
    return [str(value)] + [f"{row[c]:.6f}" for c in TABLE_COLUMNS]


def table_csv(axis: str, rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADERS[axis])
    writer.writerows(rows)
    return buf.getvalue()


def write_plot(axis: str, values: Sequence, reports: Sequence[EvalReport], out_dir: Path) -> tuple[Path, Path]:
    """J&F versus the axis, as ``<axis>_plot.csv`` plus ``<axis>_plot.png``."""
    data = out_dir / f"{axis}_plot.csv"
    labels = [TCL_LABELS[v] if axis == "tcl" else str(v) for v in values]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([HEADERS[axis][0], "J&F"])
    writer.writerows([[lab, f"{r.jf:.6f}"] for lab, r in zip(labels, reports)])
    data.write_text(buf.getvalue())
    fig, ax = plt.subplots(figsize=(4, 3), dpi=100)
    ax.plot(range(len(values)), [r.jf for r in reports], marker="o")
    ax.set_xticks(range(len(values)), labels)
    ax.set_xlabel(HEADERS[axis][0])
    ax.set_ylabel("J&F")
    fig.tight_layout()
    image = out_dir / f"{axis}_plot.png"
    fig.savefig(image, metadata={"Software": None})
    plt.close(fig)
    return data, image


def run_ablation(cfg: ExperimentConfig, axis: str, values, train_videos: Sequence[SyntheticVideo],
                 eval_videos: Sequence[SyntheticVideo], eval_names: Sequence[str], out_dir,
                 evaluate_variant=None) -> Path:
    """Train and score every value; returns the path of ``<axis>.csv``.

    ``evaluate_variant(cfg) -> EvalReport`` replaces the train-then-pipeline
    step, which keeps shape tests cheap.
    """
    values = parse_values(axis, values)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for value in values:
        vcfg = variant(cfg, axis, value)
        if evaluate_variant is not None:
            report = evaluate_variant(vcfg)
        else:
            tag = f"{axis}_{value}"
            model = train_variant(vcfg, train_videos, log_path=out_dir / f"{tag}.train.jsonl",
                                  checkpoint=out_dir / f"{tag}.ckpt")
            report, _ = run_pipeline(eval_videos, eval_names, out_dir / tag, model=model,
                                     tracker_cfg=vcfg.tracker, segmenter=vcfg.segmenter, seed=vcfg.seed,
                                     jobs=vcfg.jobs)
        reports.append(report)
    table = out_dir / f"{axis}.csv"
    table.write_text(table_csv(axis, [table_row(axis, v, r) for v, r in zip(values, reports)]))
    write_plot(axis, values, reports, out_dir)
    return table

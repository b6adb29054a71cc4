"""Command-line entry point: ``stdvos <command> [options]``.

Commands: generate, train, pipeline, ablate, eval, config show.
Exit codes: 0 success, 2 usage, 3 configuration, 4 runtime.
Scalar settings resolve as flag > ``STDVOS_*`` environment > config file > default.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import torch
import yaml

from . import ablate as ablate_mod
from .attention import ConfigError
from .config import ExperimentConfig, load_config
from .model import STDNet
from .pipeline import dataset_dirs, evaluate_outputs, run_pipeline, write_report
from .synthetic import DatasetSpec, generate_dataset, load
from .train import Trainer, model_from_checkpoint

log = logging.getLogger("stdvos")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _common(parser: argparse.ArgumentParser, *flags: str) -> None:
    parser.add_argument("--config", type=Path, help="YAML experiment config")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", type=Path, required="out" in flags)
    if "jobs" in flags:
        parser.add_argument("--jobs", type=int)
    if "seg" in flags:
        parser.add_argument("--segmenter", help="'oracle' or 'remote:URL'")
        parser.add_argument("--jitter", type=float, metavar="SIGMA")
        parser.add_argument("--prompts-from-gt", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stdvos", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a synthetic dataset")
    _common(g, "out")
    g.add_argument("--spec", type=Path, required=True, help="YAML dataset spec")

    t = sub.add_parser("train", help="train the tracking network")
    _common(t, "out")
    t.add_argument("--data", type=Path)
    t.add_argument("--steps", type=int)
    t.add_argument("--resume", action="store_true", help="continue from <out>/model")

    r = sub.add_parser("pipeline", help="track, prompt, segment and evaluate")
    _common(r, "out", "jobs", "seg")
    r.add_argument("--checkpoint", type=Path)
    r.add_argument("--data", type=Path)

    a = sub.add_parser("ablate", help="train and score one model per axis value")
    _common(a, "out", "jobs")
    a.add_argument("--axis", required=True)
    a.add_argument("--values", required=True, help="comma separated, e.g. 0,1,2 or off,on")
    a.add_argument("--data", type=Path, help="training dataset")
    a.add_argument("--eval-data", type=Path)

    e = sub.add_parser("eval", help="score mask PNGs written by 'pipeline'")
    _common(e, "out", "jobs")
    e.add_argument("--pred", type=Path, required=True)
    e.add_argument("--data", type=Path)

    c = sub.add_parser("config", help="inspect the resolved configuration")
    c.add_argument("action", choices=["show"])
    _common(c, "jobs", "seg")
    return p


def resolve_config(args) -> ExperimentConfig:
    overrides = {k: getattr(args, k, None) for k in ("seed", "jobs", "segmenter", "jitter")}
    cfg = load_config(args.config, overrides)
    if getattr(args, "steps", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, steps=args.steps))
    return cfg


def _dataset(path, fallback, what: str) -> Path:
    path = path or (Path(fallback) if fallback else None)
    if path is None:
        raise UsageError(f"no {what} given (flag or config)")
    return Path(path)


def _videos(directory: Path):
    dirs = dataset_dirs(directory)
    return [load(d) for d in dirs], [d.name for d in dirs]


def cmd_generate(args) -> int:
    try:
        data = yaml.safe_load(args.spec.read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read {args.spec}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{args.spec}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{args.spec}: expected a mapping")
    spec = DatasetSpec.from_dict(data)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    generate_dataset(spec, args.out)
    print(f"wrote {spec.num_videos} videos to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    videos, _ = _videos(_dataset(args.data, cfg.data_dir, "training dataset"))
    torch.manual_seed(cfg.seed)
    model = STDNet(cfg.attention, cfg.model)
    trainer = Trainer(model, videos, cfg.loss, cfg.train, seed=cfg.seed)
    ckpt = args.out / "model"
    log_path = args.out / "train.jsonl"
    args.out.mkdir(parents=True, exist_ok=True)
    if args.resume:
        trainer.resume(ckpt)
    elif log_path.exists():
        log_path.unlink()
    (args.out / "config.yaml").write_text(cfg.to_yaml())
    remaining = max(0, cfg.train.steps - trainer.step)
    records = trainer.run(remaining, log_path=log_path)
    trainer.save(ckpt)
    if records:
        print(f"step {trainer.step}: total {records[-1]['total']:.4f} (first {records[0]['total']:.4f})")
    print(f"checkpoint: {ckpt.with_suffix('.npz')}")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = resolve_config(args)
    model = None
    if not args.prompts_from_gt:
        if args.checkpoint is None:
            raise UsageError("--checkpoint is required unless --prompts-from-gt is set")
        if not args.checkpoint.with_suffix(".npz").exists():
            raise UsageError(f"checkpoint not found: {args.checkpoint.with_suffix('.npz')}")
        model, _ = model_from_checkpoint(args.checkpoint)
    videos, names = _videos(_dataset(args.data, cfg.eval_dir or cfg.data_dir, "dataset"))
    report, _ = run_pipeline(videos, names, args.out, model=model, tracker_cfg=cfg.tracker,
                             segmenter=cfg.segmenter, jitter=cfg.jitter, seed=cfg.seed,
                             prompts_from_gt=args.prompts_from_gt, jobs=cfg.jobs)
    print(report.to_csv(), end="")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    values = ablate_mod.parse_values(args.axis, args.values)
    train_videos, _ = _videos(_dataset(args.data, cfg.data_dir, "training dataset"))
    eval_videos, names = _videos(_dataset(args.eval_data, cfg.eval_dir, "evaluation dataset"))
    table = ablate_mod.run_ablation(cfg, args.axis, values, train_videos, eval_videos, names, args.out)
    print(table.read_text(), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    data = _dataset(args.data, cfg.eval_dir or cfg.data_dir, "dataset")
    report = evaluate_outputs(args.pred, data, jobs=cfg.jobs)
    write_report(report, args.out)
    print(report.to_csv(), end="")
    return EXIT_OK


def cmd_config(args) -> int:
    cfg = resolve_config(args)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "config.yaml").write_text(cfg.to_yaml())
    print(cfg.to_yaml(), end="")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "pipeline": cmd_pipeline,
            "ablate": cmd_ablate, "eval": cmd_eval, "config": cmd_config}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ablate_mod.AxisError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``galimo {generate,odometry,evaluate,ga}``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional, Sequence

from . import config as C
from .evaluation import (
    KITTI_LENGTHS,
    EvaluationError,
    Trajectory,
    kitti_translation_error,
    load_kitti_poses,
    save_kitti_poses,
)
from .ga import FIELDS, STOCK, TaskEvaluator, history_csv, run_ga
from .pipeline import SequenceTask, run_backend, run_frontend
from .scene import InvalidConfig, SyntheticSequence, generate


class CliError(Exception):
    def __init__(self, message: str, status: int = 1):
        super().__init__(message)
        self.status = status


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'section.key = value' config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--seed", type=int, help="run seed (run.seed)")
    common.add_argument("--workers", type=int, help="evaluation processes (run.workers)")
    common.add_argument("--out", help="output directory (run.out)")

    ap = argparse.ArgumentParser(prog="galimo", description="Lidar-monocular odometry with GA-tuned parameters.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic scene directory")
    p = sub.add_parser("odometry", parents=[common], help="run the odometry pipeline on a scene")
    p.add_argument("--scene", help="scene directory (run.scene)")
    p = sub.add_parser("evaluate", parents=[common], help="compare an estimated trajectory to ground truth")
    p.add_argument("--estimate", help="estimated poses, KITTI format (run.estimate)")
    p.add_argument("--ground-truth", help="ground-truth poses, KITTI format (run.ground_truth)")
    p.add_argument("--lengths", help="comma-separated segment lengths in metres (evaluate.lengths)")
    p.add_argument("--step", type=int, help="first-frame step (evaluate.step)")
    p = sub.add_parser("ga", parents=[common], help="tune the five parameters with a genetic algorithm")
    p.add_argument("--task", action="append", default=[], metavar="NAME=SCENE_DIR", help="evaluation task (tasks.NAME)")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    p.add_argument("--stop-after", type=int, help="stop after this many generations (for staged runs)")
    return ap


def _merge(args) -> dict:
    cfg = C.load_config(args.config) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise C.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        cfg[k] = v
    flags = {
        "run.seed": args.seed,
        "run.workers": args.workers,
        "run.out": args.out,
        "run.scene": getattr(args, "scene", None),
        "run.estimate": getattr(args, "estimate", None),
        "run.ground_truth": getattr(args, "ground_truth", None),
        "evaluate.lengths": getattr(args, "lengths", None),
        "evaluate.step": getattr(args, "step", None),
    }
    for k, v in flags.items():
        if v is not None:
            cfg[k] = str(v)
    for item in getattr(args, "task", []):
        if "=" not in item:
            raise C.ConfigError(f"--task expects NAME=SCENE_DIR, got {item!r}")
        name, path = (s.strip() for s in item.split("=", 1))
        cfg[f"tasks.{name}"] = path
    return cfg


def _run_config(command: str, cfg: dict) -> C.RunConfig:
    run = C.section(cfg, "run")
    allowed = {"seed", "workers", "out", "scene", "estimate", "ground_truth"}
    for k in run:
        if k not in allowed:
            raise C.ConfigError(f"unknown key run.{k}")
    try:
        seed = int(run.get("seed", "0"))
        workers = int(run.get("workers", str(os.cpu_count() or 1)))
    except ValueError as exc:
        raise C.ConfigError(str(exc)) from None
    rc = C.RunConfig(
        command=command,
        values=cfg,
        scene=Path(run["scene"]) if "scene" in run else None,
        tasks={k: Path(v) for k, v in sorted(C.section(cfg, "tasks").items())},
        estimate=Path(run["estimate"]) if "estimate" in run else None,
        ground_truth=Path(run["ground_truth"]) if "ground_truth" in run else None,
        out=Path(run["out"]) if "out" in run else None,
        seed=seed,
        workers=workers,
    )
    return rc.validate()


def _prepare_out(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CliError(f"cannot write to {path}: {exc}") from None
    return path


def cmd_generate(rc: C.RunConfig) -> int:
    cfg = dict(rc.values)
    if "run.seed" in cfg:
        cfg["scene.seed"] = str(rc.seed)
    try:
        sc = C.scene_config(cfg)
    except (C.ConfigError, InvalidConfig) as exc:
        raise CliError(f"invalid scene config: {exc}") from None
    out = _prepare_out(rc.out)
    seq = generate(sc)
    seq.save(out)
    C.write_manifest(out / "manifest.json", "generate", cfg, sc.seed, {"scene": sc.to_dict()})
    summary = seq.summary()
    print(json.dumps(summary, sort_keys=True))
    return 0


def _pipeline_setup(rc: C.RunConfig):
    cfg = rc.values
    pc = C.pipeline_config(cfg)
    if "run.seed" in cfg:
        pc = replace(pc, selection_seed=rc.seed)
    base = C.ba_params(cfg)
    params = C.parameter_set(cfg, STOCK)
    return pc, base, params


def cmd_odometry(rc: C.RunConfig) -> int:
    pc, base, params = _pipeline_setup(rc)
    out = _prepare_out(rc.out)
    try:
        seq = SyntheticSequence.load(rc.scene)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load scene {rc.scene}: {exc}") from None
    marker = out / "FAILED"
    if marker.exists():
        marker.unlink()
    front = None
    try:
        front = run_frontend(seq, pc)
        result = run_backend(front, params.to_ba_params(base), pc)
    except Exception as exc:  # noqa: BLE001 - report and keep what we have
        if front is not None:
            save_kitti_poses(out / "trajectory.txt", Trajectory.from_poses([p.inverse() for p in front.odometry_poses]))
        marker.write_text(f"{type(exc).__name__}: {exc}\n")
        raise CliError(f"pipeline failed: {exc}") from None
    traj = result.trajectory()
    save_kitti_poses(out / "trajectory.txt", traj)
    C.write_manifest(
        out / "manifest.json",
        "odometry",
        rc.values,
        rc.seed,
        {
            "parameters": {C.CONFIG_NAMES[f]: getattr(params, f) for f in FIELDS},
            "poses": len(traj),
            "keyframes": result.keyframe_ids,
            "windows": result.windows,
            "frontend_failures": front.failures,
            "backend_failures": result.failures,
        },
    )
    print(f"wrote {len(traj)} poses to {out / 'trajectory.txt'}")
    return 0


def _lengths(cfg: dict):
    text = cfg.get("evaluate.lengths")
    if text is None:
        return KITTI_LENGTHS
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise C.ConfigError(f"evaluate.lengths: cannot interpret {text!r}") from None
    if not vals or min(vals) <= 0:
        raise C.ConfigError("evaluate.lengths must be positive")
    return vals


def cmd_evaluate(rc: C.RunConfig) -> int:
    cfg = rc.values
    lengths = _lengths(cfg)
    step = int(cfg.get("evaluate.step", "10"))
    out = _prepare_out(rc.out)
    try:
        est = load_kitti_poses(rc.estimate)
        gt = load_kitti_poses(rc.ground_truth)
        report = kitti_translation_error(est, gt, lengths, step)
    except EvaluationError as exc:
        raise CliError(f"{type(exc).__name__}: {exc}", status=2) from None
    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.to_table())
    C.write_manifest(out / "manifest.json", "evaluate", cfg, rc.seed)
    print(f"translation error: {report.translation_error_percent:.4f} %")
    print(f"APE RMSE: {report.ape_rmse:.6f} m")
    if report.too_short:
        print("warning: trajectory shorter than every segment length", file=sys.stderr)
    return 0


def cmd_ga(rc: C.RunConfig) -> int:
    cfg = rc.values
    gc = C.ga_config(cfg)
    if "run.seed" in cfg:
        gc = replace(gc, seed=rc.seed)
    pc, base, _ = _pipeline_setup(rc)
    out = _prepare_out(rc.out)
    tasks = {}
    for name, path in rc.tasks.items():
        try:
            seq = SyntheticSequence.load(path)
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot load task {name} from {path}: {exc}") from None
        tasks[name] = SequenceTask(seq, pc, base, name)
    evaluator = TaskEvaluator(tasks, gc.fitness_ceiling)

    def progress(st):
        print(f"generation {st.generation}: best {st.best:.6g} mean {st.mean:.6g} worst {st.worst:.6g}", file=sys.stderr)

    result = run_ga(
        gc, evaluator, out / "checkpoint.json", resume=rc.resume, workers=rc.workers,
        stop_after=rc.stop_after, progress=progress,
    )
    (out / "history.csv").write_text(history_csv(result.history, list(tasks)))
    done = len(result.stats) == gc.generations
    stock = evaluator(STOCK)
    best = result.best
    doc = {
        "complete": done,
        "generations_run": len(result.stats),
        "best_chromosome": result.best_chromosome,
        "columns": ["LIMO", "GA-LIMO"],
        "parameters": {
            C.CONFIG_NAMES[f]: [getattr(STOCK, f), getattr(best.params, f)] for f in FIELDS
        },
        "translation_error_percent": {
            name: [stock.sigma_per_sequence[name], best.sigma_per_sequence[name]] for name in tasks
        },
        "sigma_avg": [stock.sigma_avg, best.sigma_avg],
        "fitness": [stock.fitness, best.fitness],
        "generation_stats": [
            {"generation": s.generation, "best": s.best, "mean": s.mean, "worst": s.worst, "best_ever": s.best_ever}
            for s in result.stats
        ],
    }
    (out / "best.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    C.write_manifest(out / "manifest.json", "ga", cfg, gc.seed, {"ga": asdict(gc), "tasks": list(tasks)})
    print(f"best sigma_avg {best.sigma_avg:.4f} % (stock {stock.sigma_avg:.4f} %)")
    return 0


COMMAND_FUNCS = {"generate": cmd_generate, "odometry": cmd_odometry, "evaluate": cmd_evaluate, "ga": cmd_ga}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _merge(args)
        rc = _run_config(args.command, cfg)
        rc.resume = bool(getattr(args, "resume", False))
        rc.stop_after = getattr(args, "stop_after", None)
        return COMMAND_FUNCS[args.command](rc)
    except CliError as exc:
        print(f"galimo {args.command}: {exc}", file=sys.stderr)
        return exc.status
    except C.ConfigError as exc:
        print(f"galimo {args.command}: config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

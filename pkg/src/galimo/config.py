"""Flat ``section.key = value`` configuration files and run manifests.

Blank lines and ``#`` comments are ignored.  Values are kept as strings
until a section is converted to its typed dataclass, so a config can be
written back out unchanged.
"""

from __future__ import annotations

import hashlib
import json
import platform
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .backend import BaParams, KeyframeConfig
from .ga import CONFIG_NAMES, GaConfig, ParameterSet
from .odometry import SolverConfig
from .pipeline import PipelineConfig
from .scene import SceneConfig

COMMANDS = ("generate", "odometry", "evaluate", "ga")
PARAM_KEYS = {v: k for k, v in CONFIG_NAMES.items()}


class ConfigError(ValueError):
    pass


def parse_config(text: str, source: str = "<config>") -> dict:
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"{source}:{lineno}: key {key!r} has no section prefix")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return parse_config(text, str(p))


def format_config(cfg: Mapping[str, str]) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


def config_hash(cfg: Mapping[str, str]) -> str:
    return hashlib.sha256(format_config(cfg).encode()).hexdigest()


def section(cfg: Mapping[str, str], name: str) -> dict:
    prefix = name + "."
    return {k[len(prefix):]: v for k, v in cfg.items() if k.startswith(prefix)}


def _convert(value: str, like, key: str):
    try:
        if isinstance(like, bool):
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
        if isinstance(like, tuple):
            return tuple(float(v) for v in value.split(",") if v.strip())
        return value
    except ValueError:
        raise ConfigError(f"{key}: cannot interpret {value!r}") from None


def _typed(cls, values: Mapping[str, str], prefix: str, base=None, rename: Optional[Mapping[str, str]] = None):
    base = cls() if base is None else base
    rename = rename or {}
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in values.items():
        name = rename.get(key, key)
        if name not in known:
            raise ConfigError(f"unknown key {prefix}.{key}")
        kwargs[name] = _convert(value, getattr(base, name), f"{prefix}.{key}")
    try:
        return replace(base, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"{prefix}: {exc}") from None


def scene_config(cfg: Mapping[str, str]) -> SceneConfig:
    return _typed(SceneConfig, section(cfg, "scene"), "scene")


def parameter_set(cfg: Mapping[str, str], base: ParameterSet) -> ParameterSet:
    """Tunable parameters from ``params.*`` under their long config names."""
    values = {k: v for k, v in section(cfg, "params").items() if k in PARAM_KEYS}
    return _typed(ParameterSet, values, "params", base, PARAM_KEYS)


def ba_params(cfg: Mapping[str, str]) -> BaParams:
    """Fixed BA settings (weights, bin limits) from ``params.*``."""
    values = {k: v for k, v in section(cfg, "params").items() if k not in PARAM_KEYS}
    allowed = {"w0", "w1", "w2", "near_max", "middle_max", "squared_regularizer"}
    for k in values:
        if k not in allowed:
            raise ConfigError(f"unknown key params.{k}")
    return _typed(BaParams, values, "params")


def ga_config(cfg: Mapping[str, str]) -> GaConfig:
    return _typed(GaConfig, section(cfg, "ga"), "ga")


def pipeline_config(cfg: Mapping[str, str]) -> PipelineConfig:
    values = section(cfg, "pipeline")
    pc = PipelineConfig()
    kf = pc.keyframes
    ba = pc.ba_solver
    for key, value in values.items():
        if key == "eval_lengths":
            pc = replace(pc, eval_lengths=_convert(value, (), "pipeline.eval_lengths"))
        elif key == "eval_step":
            pc = replace(pc, eval_step=_convert(value, 1, "pipeline.eval_step"))
        elif key == "selection_seed":
            pc = replace(pc, selection_seed=_convert(value, 1, "pipeline.selection_seed"))
        elif key == "keyframe_window":
            kf = replace(kf, window=_convert(value, 1, "pipeline.keyframe_window"))
        elif key == "keyframe_interval":
            kf = replace(kf, min_interval=_convert(value, 1.0, "pipeline.keyframe_interval"))
        elif key == "ba_max_iterations":
            ba = replace(ba, max_iterations=_convert(value, 1, "pipeline.ba_max_iterations"))
        elif key == "ba_rel_tol":
            ba = replace(ba, rel_tol=_convert(value, 1.0, "pipeline.ba_rel_tol"))
        else:
            raise ConfigError(f"unknown key pipeline.{key}")
    return replace(pc, keyframes=kf, ba_solver=ba)


@dataclass
class RunConfig:
    command: str
    values: dict = field(default_factory=dict)
    scene: Optional[Path] = None
    tasks: dict = field(default_factory=dict)
    estimate: Optional[Path] = None
    ground_truth: Optional[Path] = None
    out: Optional[Path] = None
    seed: int = 0
    workers: int = 1
    resume: bool = False
    stop_after: Optional[int] = None

    def validate(self) -> RunConfig:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        paths = []
        if self.command == "odometry":
            if self.scene is None:
                raise ConfigError("odometry needs a scene directory")
            paths.append(self.scene)
        if self.command == "evaluate":
            if self.estimate is None or self.ground_truth is None:
                raise ConfigError("evaluate needs an estimate and a ground-truth file")
            paths += [self.estimate, self.ground_truth]
        if self.command == "ga":
            if not self.tasks:
                raise ConfigError("ga needs at least one task")
            paths += list(self.tasks.values())
        for p in paths:
            if not Path(p).exists():
                raise ConfigError(f"path does not exist: {p}")
        if self.out is None:
            raise ConfigError("an output directory is required")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        return self


def versions() -> dict:
    from . import __version__, kernels

    return {
        "galimo": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "kernels": kernels.BACKEND,
    }


def write_manifest(path, command: str, cfg: Mapping[str, str], seed: int, extra: Optional[dict] = None) -> None:
    # the output location does not affect results
    cfg = {k: v for k, v in cfg.items() if k != "run.out"}
    doc = {
        "command": command,
        "config": dict(sorted(cfg.items())),
        "config_hash": config_hash(cfg),
        "seed": seed,
        "versions": versions(),
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


__all__ = [
    "COMMANDS",
    "ConfigError",
    "KeyframeConfig",
    "RunConfig",
    "SolverConfig",
    "ba_params",
    "config_hash",
    "format_config",
    "ga_config",
    "load_config",
    "parameter_set",
    "parse_config",
    "pipeline_config",
    "scene_config",
    "section",
    "write_manifest",
]

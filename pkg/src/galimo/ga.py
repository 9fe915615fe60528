"""Genetic search over the five odometry robustness parameters.

A chromosome is 55 bits: five 11-bit fields, most significant bit first, in
the order delta, eps_near, eps_middle, eps_far, mu.  Each field code
``v in [0, 2047]`` maps to ``floor(v * 1000 / 2048)``, an integer in
``[0, 999]``; delta and mu divide that by 1000.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

FIELD_BITS = 11
FIELDS = ("delta", "eps_near", "eps_middle", "eps_far", "mu")
CHROMOSOME_LENGTH = FIELD_BITS * len(FIELDS)
LEVELS = 1000
CODES = 1 << FIELD_BITS

# config names used by the reference implementation's parameter files
CONFIG_NAMES = {
    "delta": "outlier_rejection_quantile",
    "eps_near": "max_number_landmarks_near_bin",
    "eps_middle": "max_number_landmarks_middle_bin",
    "eps_far": "max_number_landmarks_far_bin",
    "mu": "shrubbery_weight",
}

_WEIGHTS = 1 << np.arange(FIELD_BITS - 1, -1, -1)


class OutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class ParameterSet:
    delta: float
    eps_near: int
    eps_middle: int
    eps_far: int
    mu: float

    def __post_init__(self):
        for name in ("delta", "mu"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise OutOfRange(f"{name}={v} outside [0, 1]")
        for name in ("eps_near", "eps_middle", "eps_far"):
            v = getattr(self, name)
            if int(v) != v or not 0 <= v <= 999:
                raise OutOfRange(f"{name}={v} outside the integers 0..999")
            object.__setattr__(self, name, int(v))

    def codes(self) -> tuple[int, ...]:
        """Integer level of each field in 0..999."""
        out = []
        for name in FIELDS:
            v = getattr(self, name)
            if name in ("delta", "mu"):
                c = round(v * LEVELS)
                if abs(c - v * LEVELS) > 1e-6:
                    raise OutOfRange(f"{name}={v} is not a multiple of 0.001")
                out.append(min(int(c), LEVELS - 1) if c < LEVELS else LEVELS)
            else:
                out.append(int(v))
        return tuple(out)

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in FIELDS}

    def to_ba_params(self, base=None):
        from dataclasses import replace

        from .backend import BaParams

        base = BaParams() if base is None else base
        return replace(base, **self.as_dict())

    @classmethod
    def from_codes(cls, codes: Sequence[int]) -> ParameterSet:
        d, en, em, ef, m = (int(c) for c in codes)
        return cls(d / LEVELS, en, em, ef, m / LEVELS)


STOCK = ParameterSet(0.95, 400, 400, 400, 0.9)


def _field_values(bits: np.ndarray) -> np.ndarray:
    b = np.asarray(bits, dtype=np.int64).reshape(-1, len(FIELDS), FIELD_BITS)
    return b @ _WEIGHTS


def decode_codes(population) -> np.ndarray:
    """Field levels ``(N, 5)`` in 0..999 for a batch of chromosomes."""
    return _field_values(population) * LEVELS // CODES


def decode(bits) -> ParameterSet:
    bits = np.asarray(bits, dtype=bool)
    if bits.shape != (CHROMOSOME_LENGTH,):
        raise ValueError(f"chromosome must have {CHROMOSOME_LENGTH} bits, got {bits.shape}")
    return ParameterSet.from_codes(decode_codes(bits)[0])


def encode(p: ParameterSet) -> np.ndarray:
    codes = p.codes()
    bits = np.zeros(CHROMOSOME_LENGTH, dtype=bool)
    for f, c in enumerate(codes):
        if not 0 <= c < LEVELS:
            raise OutOfRange(f"{FIELDS[f]} level {c} not representable")
        v = -(-c * CODES // LEVELS)  # smallest code that decodes to c
        for b in range(FIELD_BITS):
            bits[f * FIELD_BITS + b] = (v >> (FIELD_BITS - 1 - b)) & 1
    return bits


def to_hex(bits) -> str:
    v = 0
    for b in np.asarray(bits, dtype=bool):
        v = (v << 1) | int(b)
    return format(v, f"0{(CHROMOSOME_LENGTH + 3) // 4}x")


def from_hex(text: str) -> np.ndarray:
    v = int(text, 16)
    if v >> CHROMOSOME_LENGTH:
        raise ValueError("hex string encodes more than 55 bits")
    return np.array([(v >> (CHROMOSOME_LENGTH - 1 - i)) & 1 for i in range(CHROMOSOME_LENGTH)], dtype=bool)


# --- operators -------------------------------------------------------------


def rank_probabilities(fitnesses) -> np.ndarray:
    """Linear ranking: worst weight 1, best weight N, ties share their mean rank."""
    ranks = rankdata(np.asarray(fitnesses, dtype=float), method="average")
    return ranks / ranks.sum()


def rank_select(fitnesses, count: int, rng: np.random.Generator) -> np.ndarray:
    if len(fitnesses) == 0:
        raise ValueError("cannot select from an empty population")
    return rng.choice(len(fitnesses), size=count, replace=True, p=rank_probabilities(fitnesses))


def uniform_crossover(a, b, rng: np.random.Generator):
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("parents differ in length")
    swap = rng.random(a.shape) < 0.5
    return np.where(swap, b, a), np.where(swap, a, b)


def flip_mutation(c, rate: float, rng: np.random.Generator, mode: str = "per_bit"):
    """``per_bit``: every bit flips with probability ``rate``.
    ``per_individual``: with probability ``rate`` one random bit flips."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("mutation rate must lie in [0, 1]")
    c = np.asarray(c, dtype=bool)
    if mode == "per_bit":
        return c ^ (rng.random(c.shape) < rate)
    if mode == "per_individual":
        out = c.copy()
        if rng.random() < rate:
            i = rng.integers(c.shape[-1])
            out[i] = ~out[i]
        return out
    raise ValueError(f"unknown mutation mode {mode!r}")


# --- fitness ---------------------------------------------------------------


@dataclass
class FitnessRecord:
    params: ParameterSet
    sigma_per_sequence: dict
    sigma_avg: float
    fitness: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "sigma_per_sequence": dict(self.sigma_per_sequence),
            "sigma_avg": self.sigma_avg,
            "fitness": self.fitness,
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> FitnessRecord:
        return cls(
            ParameterSet(**d["params"]),
            dict(d["sigma_per_sequence"]),
            float(d["sigma_avg"]),
            float(d["fitness"]),
            bool(d["degenerate"]),
        )


def evaluate_fitness(
    p: ParameterSet,
    tasks: Mapping[str, Callable[[ParameterSet], float]],
    ceiling: float = 1e6,
) -> FitnessRecord:
    """Average the translation error over tasks; fitness is its inverse.

    A zero, negative or non-finite error (or a failing task) yields the
    ``ceiling`` fitness for zero error and ``1/ceiling`` otherwise, flagged
    as degenerate.
    """
    sigmas = {}
    degenerate = False
    for name, task in tasks.items():
        try:
            s = float(task(p))
        except Exception:  # noqa: BLE001 - a failing run is a bad individual, not a crash
            s = math.inf
        sigmas[name] = s
    avg = float(np.mean(list(sigmas.values()))) if sigmas else math.inf
    if not math.isfinite(avg) or avg < 0:
        degenerate = True
        fitness = 1.0 / ceiling
    elif avg == 0:
        degenerate = True
        fitness = ceiling
    else:
        fitness = min(1.0 / avg, ceiling)
        degenerate = fitness == ceiling
    return FitnessRecord(p, sigmas, avg, fitness, degenerate)


class TaskEvaluator:
    """Fitness over a named set of translation-error tasks."""

    def __init__(self, tasks: Mapping[str, Callable[[ParameterSet], float]], ceiling: float = 1e6):
        self.tasks = dict(tasks)
        self.ceiling = ceiling

    @property
    def task_names(self) -> list[str]:
        return list(self.tasks)

    def __call__(self, p: ParameterSet) -> FitnessRecord:
        return evaluate_fitness(p, self.tasks, self.ceiling)


class FunctionEvaluator:
    """Wrap a plain ``params -> fitness`` function (no error terms)."""

    task_names: list = []

    def __init__(self, fn: Callable[[ParameterSet], float]):
        self.fn = fn

    def __call__(self, p: ParameterSet) -> FitnessRecord:
        f = float(self.fn(p))
        return FitnessRecord(p, {}, math.nan, f, False)


# --- engine ----------------------------------------------------------------


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 50
    generations: int = 50
    mutation_rate: float = 0.1
    mutation_mode: str = "per_bit"
    crossover_rate: float = 0.9
    elitism_count: int = 1
    seed: int = 0
    fitness_ceiling: float = 1e6

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if self.generations < 1:
            raise ValueError("generations must be at least 1")
        for name in ("mutation_rate", "crossover_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0 <= self.elitism_count <= self.population_size:
            raise ValueError("elitism_count must lie in [0, population_size]")
        if self.mutation_mode not in ("per_bit", "per_individual"):
            raise ValueError(f"unknown mutation mode {self.mutation_mode!r}")


@dataclass
class HistoryRow:
    generation: int
    index: int
    chromosome: str
    record: FitnessRecord


@dataclass
class GenerationStats:
    generation: int
    best: float
    mean: float
    worst: float
    best_ever: float


@dataclass
class GaResult:
    best: FitnessRecord
    best_chromosome: str
    history: list
    stats: list
    evaluations: int = 0


def _breed(pop, fitness, cfg: GaConfig, rng) -> np.ndarray:
    N = cfg.population_size
    order = np.argsort(-np.asarray(fitness), kind="stable")
    elites = pop[order[: cfg.elitism_count]]
    n_children = N - cfg.elitism_count
    if n_children == 0:
        return elites.copy()
    n_parents = n_children + (n_children % 2)
    parents = rank_select(fitness, n_parents, rng)
    children = []
    for a, b in zip(parents[0::2], parents[1::2]):
        if rng.random() < cfg.crossover_rate:
            c1, c2 = uniform_crossover(pop[a], pop[b], rng)
        else:
            c1, c2 = pop[a].copy(), pop[b].copy()
        children.append(flip_mutation(c1, cfg.mutation_rate, rng, cfg.mutation_mode))
        children.append(flip_mutation(c2, cfg.mutation_rate, rng, cfg.mutation_mode))
    return np.vstack([elites] + [np.array(children[:n_children])])


_WORKER_EVALUATOR = None


def _init_worker(evaluator) -> None:
    global _WORKER_EVALUATOR
    _WORKER_EVALUATOR = evaluator


def _worker_evaluate(p: ParameterSet) -> FitnessRecord:
    return _WORKER_EVALUATOR(p)


def _evaluate_population(pop, evaluator, cache: dict, workers: int) -> list[FitnessRecord]:
    keys = [to_hex(c) for c in pop]
    todo = []
    for key in keys:
        if key not in cache and key not in todo:
            todo.append(key)
    params = [decode(from_hex(k)) for k in todo]
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(evaluator,)) as ex:
            results = list(ex.map(_worker_evaluate, params))
    else:
        results = [evaluator(p) for p in params]
    for key, rec in zip(todo, results):
        cache[key] = rec
    return [cache[k] for k in keys]


def history_csv(history: Sequence[HistoryRow], task_names: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(
        ["generation", "index", "chromosome", *FIELDS]
        + [f"sigma_{t}" for t in task_names]
        + ["sigma_avg", "fitness", "degenerate"]
    )
    for row in history:
        r = row.record
        w.writerow(
            [row.generation, row.index, row.chromosome]
            + [repr(getattr(r.params, f)) for f in FIELDS]
            + [repr(r.sigma_per_sequence.get(t, math.nan)) for t in task_names]
            + [repr(r.sigma_avg), repr(r.fitness), int(r.degenerate)]
        )
    return buf.getvalue()


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _state_to_json(gen, pop, rng, history, stats, best, best_hex, cfg) -> str:
    state = {
        "generation": gen,
        "config": asdict(cfg),
        "population": [to_hex(c) for c in pop],
        "rng_state": rng.bit_generator.state,
        "history": [
            {"generation": h.generation, "index": h.index, "chromosome": h.chromosome, "record": h.record.to_dict()}
            for h in history
        ],
        "stats": [asdict(s) for s in stats],
        "best": best.to_dict() if best is not None else None,
        "best_chromosome": best_hex,
    }
    return json.dumps(state, sort_keys=True)


def load_checkpoint(path) -> dict:
    return json.loads(Path(path).read_text())


def run_ga(
    cfg: GaConfig,
    evaluator: Callable[[ParameterSet], FitnessRecord],
    checkpoint_path=None,
    resume: bool = False,
    workers: int = 1,
    stop_after: Optional[int] = None,
    progress: Optional[Callable[[GenerationStats], None]] = None,
) -> GaResult:
    """Generational GA with elitism, linear-rank selection, uniform crossover
    and flip mutation.

    ``checkpoint_path`` receives the full engine state after every
    generation; with ``resume`` the run continues from it and produces the
    same history as an uninterrupted run.  ``stop_after`` ends the run
    after that many generations have been evaluated (for interruption).
    """
    checkpoint_path = Path(checkpoint_path) if checkpoint_path else None
    rng = np.random.default_rng(cfg.seed)
    history: list[HistoryRow] = []
    stats: list[GenerationStats] = []
    best: Optional[FitnessRecord] = None
    best_hex = ""
    cache: dict = {}
    start = 0
    if resume and checkpoint_path is not None and checkpoint_path.exists():
        st = load_checkpoint(checkpoint_path)
        if st["config"] != asdict(cfg):
            raise ValueError("checkpoint was written with a different GA configuration")
        start = st["generation"]
        pop = np.array([from_hex(h) for h in st["population"]])
        rng.bit_generator.state = st["rng_state"]
        for h in st["history"]:
            rec = FitnessRecord.from_dict(h["record"])
            history.append(HistoryRow(h["generation"], h["index"], h["chromosome"], rec))
            cache[h["chromosome"]] = rec
        stats = [GenerationStats(**s) for s in st["stats"]]
        if st["best"] is not None:
            best = FitnessRecord.from_dict(st["best"])
            best_hex = st["best_chromosome"]
    else:
        pop = rng.random((cfg.population_size, CHROMOSOME_LENGTH)) < 0.5

    for gen in range(start, cfg.generations):
        records = _evaluate_population(pop, evaluator, cache, workers)
        fit = np.array([r.fitness for r in records])
        for i, (c, r) in enumerate(zip(pop, records)):
            history.append(HistoryRow(gen, i, to_hex(c), r))
            if best is None or r.fitness > best.fitness:
                best, best_hex = r, to_hex(c)
        stats.append(
            GenerationStats(gen, float(fit.max()), float(fit.mean()), float(fit.min()), best.fitness)
        )
        if progress is not None:
            progress(stats[-1])
        if gen + 1 < cfg.generations:
            pop = _breed(pop, fit, cfg, rng)
        if checkpoint_path is not None:
            _atomic_write(
                checkpoint_path,
                _state_to_json(gen + 1, pop, rng, history, stats, best, best_hex, cfg),
            )
        if stop_after is not None and gen + 1 - start >= stop_after and gen + 1 < cfg.generations:
            break
    return GaResult(best, best_hex, history, stats, evaluations=len(cache))

"""Seeded hyperparameter search over the re-optimization pipeline.

Random search (plus an optional grid mode) over the energy weight, the
selection sizes, the output score threshold and, when co-occurrence
statistics are supplied, the hybrid graph threshold gamma. The full trial
parameter sequence is drawn from the seed before any trial executes, so
execution order cannot change results.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .consistency import ConsistencyMatrix
from .errors import ConfigError, ConvergenceError, ParseError, SemreoptError
from .frequency import CoOccurrenceStats
from .hybrid import HybridConfig, hybrid_consistency
from .metrics import EvalConfig, evaluate
from .model import GroundTruthInstance, ImageDetections
from .reopt import ReoptConfig, reoptimize_images

OBJECTIVE_MAP = "map"
OBJECTIVE_MEAN_RECALL = "mean_recall"
OBJECTIVE_WEIGHTED = "weighted"
_OBJECTIVES = (OBJECTIVE_MAP, OBJECTIVE_MEAN_RECALL, OBJECTIVE_WEIGHTED)

MODE_RANDOM = "random"
MODE_GRID = "grid"


def _check_interval(name: str, interval: tuple[float, float]):
    lo, hi = interval
    if not lo <= hi:
        raise ConfigError(f"{name} interval must have lower <= upper, got {interval}")


@dataclass(frozen=True)
class SweepSpec:
    """Search space and budget. Intervals may collapse to a point."""

    epsilon: tuple[float, float] = (0.1, 0.99)
    epsilon_log_uniform: bool = False
    top_k: tuple[int, ...] = (100,)
    neighbor_boxes: tuple[int, ...] = (1, 3, 10, 99)
    classes_considered: tuple[int, ...] = (1, 2, 3, 5)
    post_score_threshold: tuple[float, float] = (0.0, 0.0)
    gamma: tuple[float, float] | None = None
    budget: int = 100
    seed: int = 0
    objective: str = OBJECTIVE_MAP
    objective_weight: float = 0.5  # weight of mAP in the weighted blend
    mode: str = MODE_RANDOM
    grid_points: int = 5

    def __post_init__(self):
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if self.objective not in _OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.mode not in (MODE_RANDOM, MODE_GRID):
            raise ConfigError(f"unknown sweep mode {self.mode!r}")
        if not self.top_k or not self.neighbor_boxes or not self.classes_considered:
            raise ConfigError("discrete parameter ranges must be non-empty")
        _check_interval("epsilon", self.epsilon)
        _check_interval("post_score_threshold", self.post_score_threshold)
        if self.gamma is not None:
            _check_interval("gamma", self.gamma)
        if self.epsilon[0] <= 0:
            raise ConfigError("epsilon range must be positive")
        if self.epsilon_log_uniform and self.epsilon[0] <= 0:
            raise ConfigError("log-uniform epsilon needs a positive lower bound")
        if not 0.0 <= self.objective_weight <= 1.0:
            raise ConfigError("objective_weight must be in [0, 1]")
        if self.grid_points < 1:
            raise ConfigError("grid_points must be >= 1")

    @classmethod
    def from_json(cls, path: str | Path) -> "SweepSpec":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc}", path=str(path)) from exc
        kwargs = {}
        for key in (
            "epsilon",
            "post_score_threshold",
            "gamma",
        ):
            if key in raw and raw[key] is not None:
                kwargs[key] = tuple(float(v) for v in raw[key])
        for key in ("top_k", "neighbor_boxes", "classes_considered"):
            if key in raw:
                kwargs[key] = tuple(int(v) for v in raw[key])
        for key in ("epsilon_log_uniform",):
            if key in raw:
                kwargs[key] = bool(raw[key])
        for key in ("budget", "seed", "grid_points"):
            if key in raw:
                kwargs[key] = int(raw[key])
        for key in ("objective", "mode"):
            if key in raw:
                kwargs[key] = str(raw[key])
        if "objective_weight" in raw:
            kwargs["objective_weight"] = float(raw["objective_weight"])
        return cls(**kwargs)


@dataclass(frozen=True)
class TrialParams:
    epsilon: float
    top_k: int
    neighbor_boxes: int
    classes_considered: int
    post_score_threshold: float
    gamma: float | None = None

    def as_dict(self) -> dict:
        out = {
            "epsilon": self.epsilon,
            "top_k": self.top_k,
            "neighbor_boxes": self.neighbor_boxes,
            "classes_considered": self.classes_considered,
            "post_score_threshold": self.post_score_threshold,
        }
        if self.gamma is not None:
            out["gamma"] = self.gamma
        return out


@dataclass(frozen=True)
class TrialRecord:
    trial_id: int
    params: TrialParams
    status: str  # "ok" | "failed"
    objective_value: float | None
    map: float | None
    mean_recall: float | None
    wall_time: float
    error: str | None = None


def _sample_interval(rng: np.random.Generator, interval: tuple[float, float], log: bool = False) -> float:
    lo, hi = interval
    if lo == hi:
        return float(lo)
    if log:
        return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    return float(rng.uniform(lo, hi))


def _sample_choice(rng: np.random.Generator, values: Sequence[int]) -> int:
    return int(values[int(rng.integers(0, len(values)))])


def _draw_params(spec: SweepSpec, rng: np.random.Generator) -> TrialParams:
    return TrialParams(
        epsilon=_sample_interval(rng, spec.epsilon, log=spec.epsilon_log_uniform),
        top_k=_sample_choice(rng, spec.top_k),
        neighbor_boxes=_sample_choice(rng, spec.neighbor_boxes),
        classes_considered=_sample_choice(rng, spec.classes_considered),
        post_score_threshold=_sample_interval(rng, spec.post_score_threshold),
        gamma=None if spec.gamma is None else _sample_interval(rng, spec.gamma),
    )


def _grid_axis(interval: tuple[float, float], points: int) -> list[float]:
    lo, hi = interval
    if lo == hi or points == 1:
        return [float(lo)]
    return [float(v) for v in np.linspace(lo, hi, points)]


def _grid_params(spec: SweepSpec) -> list[TrialParams]:
    axes = [
        _grid_axis(spec.epsilon, spec.grid_points),
        list(spec.top_k),
        list(spec.neighbor_boxes),
        list(spec.classes_considered),
        _grid_axis(spec.post_score_threshold, spec.grid_points),
        _grid_axis(spec.gamma, spec.grid_points) if spec.gamma is not None else [None],
    ]
    combos = itertools.product(*axes)
    return [
        TrialParams(
            epsilon=float(eps),
            top_k=int(k),
            neighbor_boxes=int(nb),
            classes_considered=int(cc),
            post_score_threshold=float(thr),
            gamma=None if g is None else float(g),
        )
        for eps, k, nb, cc, thr, g in itertools.islice(combos, spec.budget)
    ]


def sample_trial_params(spec: SweepSpec) -> list[TrialParams]:
    """The full deterministic parameter sequence for a spec."""
    if spec.mode == MODE_GRID:
        return _grid_params(spec)
    rng = np.random.default_rng(spec.seed)
    return [_draw_params(spec, rng) for _ in range(spec.budget)]


def _objective(spec: SweepSpec, map_value: float, mean_recall: float) -> float:
    if spec.objective == OBJECTIVE_MAP:
        return map_value
    if spec.objective == OBJECTIVE_MEAN_RECALL:
        return mean_recall
    return spec.objective_weight * map_value + (1.0 - spec.objective_weight) * mean_recall


def run_trial(
    params: TrialParams,
    dets: Sequence[ImageDetections],
    gt: Sequence[GroundTruthInstance],
    consistency: ConsistencyMatrix,
    spec: SweepSpec,
    stats: CoOccurrenceStats | None = None,
    eval_config: EvalConfig | None = None,
    threads: int = 1,
) -> tuple[float, float, float]:
    """Run one configuration end to end; returns (objective, mAP, recall)."""
    matrix = consistency
    if params.gamma is not None:
        if stats is None:
            raise ConfigError("gamma search requires co-occurrence statistics")
        matrix = hybrid_consistency(
            stats, consistency.vocab, HybridConfig(gamma=params.gamma)
        )
    cfg = ReoptConfig(
        epsilon=params.epsilon,
        top_k_detections=params.top_k,
        neighbor_boxes=params.neighbor_boxes,
        classes_considered=params.classes_considered,
        post_score_threshold=params.post_score_threshold,
        allow_epsilon_above_one=params.epsilon >= 1.0,
    )
    result = reoptimize_images(dets, matrix, cfg, threads=threads)
    report = evaluate(result.images, gt, eval_config, vocab=consistency.vocab)
    return _objective(spec, report.map, report.mean_recall), report.map, report.mean_recall


def run_sweep(
    dets: Sequence[ImageDetections],
    gt: Sequence[GroundTruthInstance],
    consistency: ConsistencyMatrix,
    spec: SweepSpec,
    stats: CoOccurrenceStats | None = None,
    eval_config: EvalConfig | None = None,
    threads: int = 1,
) -> list[TrialRecord]:
    """Execute the sweep; trials sorted best-first, failed trials last.

    Deterministic given the seed: the parameter sequence is fixed up front
    and each trial's pipeline is itself deterministic. A trial that fails to
    converge is recorded as failed and the sweep continues.
    """
    if spec.gamma is not None and stats is None:
        raise ConfigError("spec searches gamma but no co-occurrence statistics were given")
    param_seq = sample_trial_params(spec)
    records: list[TrialRecord] = []
    for trial_id, params in enumerate(param_seq):
        start = time.perf_counter()
        try:
            objective_value, map_value, mean_recall = run_trial(
                params, dets, gt, consistency, spec, stats, eval_config, threads
            )
            records.append(
                TrialRecord(
                    trial_id=trial_id,
                    params=params,
                    status="ok",
                    objective_value=objective_value,
                    map=map_value,
                    mean_recall=mean_recall,
                    wall_time=time.perf_counter() - start,
                )
            )
        except (ConvergenceError, ConfigError) as exc:
            records.append(
                TrialRecord(
                    trial_id=trial_id,
                    params=params,
                    status="failed",
                    objective_value=None,
                    map=None,
                    mean_recall=None,
                    wall_time=time.perf_counter() - start,
                    error=str(exc),
                )
            )
    if all(r.status == "failed" for r in records):
        raise SemreoptError("all sweep trials failed")
    records.sort(
        key=lambda r: (
            r.status != "ok",
            -(r.objective_value if r.objective_value is not None else 0.0),
            r.trial_id,
        )
    )
    return records


_CSV_COLUMNS = (
    "trial_id",
    "status",
    "epsilon",
    "top_k",
    "neighbor_boxes",
    "classes_considered",
    "post_score_threshold",
    "gamma",
    "objective",
    "map",
    "mean_recall",
    "wall_time_s",
    "error",
)


def trials_to_csv(records: Sequence[TrialRecord]) -> str:
    def fmt(value) -> str:
        if value is None:
            return ""
        if isinstance(value, float):
            return repr(value)
        return str(value)

    lines = [",".join(_CSV_COLUMNS)]
    for r in records:
        p = r.params
        error = (r.error or "").replace(",", ";").replace("\n", " ")
        lines.append(
            ",".join(
                [
                    str(r.trial_id),
                    r.status,
                    fmt(p.epsilon),
                    str(p.top_k),
                    str(p.neighbor_boxes),
                    str(p.classes_considered),
                    fmt(p.post_score_threshold),
                    fmt(p.gamma),
                    fmt(r.objective_value),
                    fmt(r.map),
                    fmt(r.mean_recall),
                    f"{r.wall_time:.6f}",
                    error,
                ]
            )
        )
    return "\n".join(lines) + "\n"

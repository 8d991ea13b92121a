"""Experiment driver: seeded task batches, continual updates, metrics.

A run is fully determined by its :class:`ExperimentConfig`.  Episodes carry
a global index across iterations, so the lighting schedule and tool wear keep
advancing from one iteration to the next.

Outputs under the run directory::

    results.csv                 iteration,task_count,sus,avg_replans
    events.jsonl                config, every trace record, buffer snapshots,
                                update reports and iteration results
    traces/iteration_XX/episode_XXXXX.jsonl
    checkpoints/iteration_XX/   model checkpoints after each iteration
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .calibration import NEURAL_PREDICATES, calibrated_models
from .executive import ExecutionTrace, TaskSpec, read_trace, run_task, write_trace
from .learner import DEFAULT_TRIGGER, HOLDOUT_SIZE, LearningBuffer, analyze_trace, ingest, maybe_update
from .pddl import load_disassembly_domain, load_disassembly_problem
from .perception import LEARNING_RATE, save_models
from .world import DisturbanceConfig, new_episode

DEFAULT_SCHEDULE = (131, 162, 62, 39)
CSV_HEADER = ("iteration", "task_count", "sus", "avg_replans")


class ConfigError(ValueError):
    pass


class EmptyInput(ValueError):
    pass


# --------------------------------------------------------------------------
# metrics

def indicator(n: int, n_th: int) -> int:
    """1 for a task that finished under the replan budget, 0 otherwise."""
    if n < 0:
        raise ValueError("replan count must be >= 0")
    return 1 if n < n_th else 0


def compute_sus(ns: Sequence[int], n_th: int) -> float:
    if len(ns) == 0:
        raise EmptyInput("no tasks")
    return sum(indicator(n, n_th) for n in ns) / len(ns)


def compute_avg_replans(ns: Sequence[int]) -> float:
    if len(ns) == 0:
        raise EmptyInput("no tasks")
    return sum(ns) / len(ns)


@dataclass(frozen=True)
class IterationResult:
    iteration: int
    task_count: int
    sus: float
    avg_replans: float
    replans: tuple[int, ...]

    @classmethod
    def from_replans(cls, iteration: int, ns: Sequence[int], n_th: int) -> "IterationResult":
        ns = tuple(int(n) for n in ns)
        return cls(iteration, len(ns), compute_sus(ns, n_th), compute_avg_replans(ns), ns)

    def csv_row(self) -> list[str]:
        return [str(self.iteration), str(self.task_count), f"{self.sus:.4f}",
                f"{self.avg_replans:.4f}"]


def results_csv(results: Iterable[IterationResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in results:
        writer.writerow(r.csv_row())
    return buf.getvalue()


# --------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 42
    episodes_per_iteration: tuple[int, ...] = DEFAULT_SCHEDULE
    n_th: int = 10
    trigger_threshold: int = DEFAULT_TRIGGER
    learning_rate: float = LEARNING_RATE
    calibration_scenes: int = 3000
    holdout_size: int = HOLDOUT_SIZE
    neural_predicates: tuple[str, ...] = NEURAL_PREDICATES
    disturbance: DisturbanceConfig = field(default_factory=DisturbanceConfig)
    output_dir: str = "nstamp_run"

    def __post_init__(self) -> None:
        object.__setattr__(self, "episodes_per_iteration",
                           tuple(int(n) for n in self.episodes_per_iteration))
        object.__setattr__(self, "neural_predicates", tuple(self.neural_predicates))
        if not self.episodes_per_iteration:
            raise ConfigError("episodes_per_iteration must not be empty")
        if min(self.episodes_per_iteration) < 1:
            raise ConfigError("every iteration needs at least one episode")
        for name in ("n_th", "trigger_threshold", "calibration_scenes", "holdout_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        unknown = set(self.neural_predicates) - set(NEURAL_PREDICATES)
        if unknown:
            raise ConfigError(f"no classifier for predicate(s) {sorted(unknown)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["episodes_per_iteration"] = list(self.episodes_per_iteration)
        d["neural_predicates"] = list(self.neural_predicates)
        d["disturbance"] = self.disturbance.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config key(s) {sorted(unknown)}")
        d = dict(d)
        try:
            if "disturbance" in d:
                d["disturbance"] = DisturbanceConfig.from_dict(d["disturbance"])
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, source: str) -> "ExperimentConfig":
        """Read a JSON config file; the name ``default`` gives the built-in one."""
        if source == "default":
            return cls()
        try:
            with open(source, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{source}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{source}: top level must be an object")
        return cls.from_dict(data)


# --------------------------------------------------------------------------
# the experiment

def _dump(record: dict) -> str:
    return json.dumps(record, sort_keys=True) + "\n"


def run_experiment(config: ExperimentConfig, out_dir: Optional[Path] = None) -> list[IterationResult]:
    """Run every iteration; write outputs when ``out_dir`` is given."""
    domain = load_disassembly_domain()
    problem = load_disassembly_problem(domain)
    task = TaskSpec(problem.init, problem.goal, config.n_th)
    models = calibrated_models(config.disturbance, config.seed, config.calibration_scenes,
                               config.learning_rate)
    buffer = LearningBuffer(config.trigger_threshold)

    events = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        events = open(out_dir / "events.jsonl", "w", encoding="utf-8")
    try:
        if events:
            events.write(_dump({"type": "config", "config": config.to_dict()}))
        results = []
        episode = 0
        for it, count in enumerate(config.episodes_per_iteration):
            ns = []
            trace_dir = None
            if out_dir is not None:
                trace_dir = out_dir / "traces" / f"iteration_{it:02d}"
                trace_dir.mkdir(parents=True, exist_ok=True)
            for _ in range(count):
                world = new_episode(config.disturbance, episode, config.seed)
                trace = run_task(task, domain, world, models, config.neural_predicates)
                ns.append(trace.replan_count)
                buffer = ingest(buffer, analyze_trace(trace, domain.predicates))
                models, buffer, report = maybe_update(
                    buffer, models, config.disturbance, config.seed, it, config.holdout_size)
                if events:
                    write_trace(trace, trace_dir / f"episode_{episode:05d}.jsonl")
                    for rec in trace.to_records():
                        events.write(_dump({**rec, "iteration": it, "episode": episode}))
                    if report is not None:
                        events.write(_dump({**report.to_dict(), "episode": episode,
                                            "buffer": buffer.snapshot()}))
                episode += 1
            result = IterationResult.from_replans(it, ns, config.n_th)
            results.append(result)
            if events:
                events.write(_dump({"type": "iteration", **asdict(result),
                                    "buffer": buffer.snapshot()}))
                save_models(models, out_dir / "checkpoints" / f"iteration_{it:02d}")
    finally:
        if events:
            events.close()
    if out_dir is not None:
        (out_dir / "results.csv").write_text(results_csv(results), encoding="utf-8")
    return results


def metrics_from_traces(trace_dir: Path) -> list[IterationResult]:
    """Recompute per-iteration metrics from logged traces.

    Traces are grouped by their parent directory (one per iteration, sorted
    by name); a flat directory counts as a single iteration.
    """
    trace_dir = Path(trace_dir)
    files = sorted(trace_dir.rglob("*.jsonl"))
    if not files:
        raise EmptyInput(f"no traces under {trace_dir}")
    groups: dict[Path, list[ExecutionTrace]] = {}
    for f in files:
        groups.setdefault(f.parent, []).append(read_trace(f))
    results = []
    for it, (_, traces) in enumerate(sorted(groups.items())):
        n_th = {t.task.n_th for t in traces}
        if len(n_th) != 1:
            raise ValueError("traces in one iteration disagree on n_th")
        results.append(IterationResult.from_replans(
            it, [t.replan_count for t in traces], n_th.pop()))
    return results

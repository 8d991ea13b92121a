"""Forward working flow: plan, check, execute, verify, replan.

The executive keeps a symbolic belief state and a replan counter ``n``.
Neural preconditions are re-sensed before every primitive; Insert and
Disassemble are followed by a force-based verification of their expected
effect.  Any disagreement updates the belief, bumps ``n`` and asks the
planner for a new sequence.  The run ends when the world reports the screw
out, or fails as soon as ``n`` reaches the threshold.

Traces serialise to JSON lines: one ``step`` record per :class:`StepRecord`
followed by one ``summary`` record (schema ``nstamp.trace/1``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .calibration import NEURAL_PREDICATES
from .pddl import Domain, Literal, PDDLError, apply, plan, satisfies
from .perception import (FORCE, VISION, Models, PredicateReading, classify, estimate_pose,
                         perceive)
from .world import Pose, WorldState, execute_primitive, sense_force, sense_vision

TRACE_SCHEMA = "nstamp.trace/1"
MATES = {"Mate_vision": VISION, "Mate_force": FORCE}
VERIFIED = {"Insert": ("socketed",), "Disassemble": ("disassembled",)}
# alignment facts dropped by the abnormal-state rule
ABNORMAL_CLEARED = ("above_screw", "target_aim", "socketed")


class PlanningFailure(RuntimeError):
    """The planner found no sequence even after the abnormal-state fallback."""


class MalformedTrace(ValueError):
    pass


def _other(modality: str) -> str:
    return FORCE if modality == VISION else VISION


@dataclass(frozen=True)
class TaskSpec:
    init: frozenset[str]
    goal: frozenset[Literal]
    n_th: int = 10

    def __post_init__(self) -> None:
        object.__setattr__(self, "init", frozenset(self.init))
        object.__setattr__(self, "goal", frozenset(self.goal))
        if self.n_th < 1:
            raise ValueError("n_th must be >= 1")

    def to_dict(self) -> dict:
        return {"init": sorted(self.init),
                "goal": sorted(([l.prop, l.positive] for l in self.goal)),
                "n_th": self.n_th}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(frozenset(d["init"]), frozenset(Literal(p, bool(v)) for p, v in d["goal"]),
                   int(d["n_th"]))


@dataclass(frozen=True)
class PoseRecord:
    modality: str
    observation: tuple[float, ...]
    pose: Pose

    def to_dict(self) -> dict:
        return {"modality": self.modality, "observation": list(self.observation),
                "pose": list(self.pose.as_array())}

    @classmethod
    def from_dict(cls, d: dict) -> "PoseRecord":
        return cls(d["modality"], tuple(float(v) for v in d["observation"]),
                   Pose.from_array(d["pose"]))


@dataclass(frozen=True)
class Verification:
    expected: frozenset[Literal]
    readings: tuple[PredicateReading, ...]
    expected_met: bool

    @property
    def mismatch(self) -> bool:
        return not self.expected_met

    def to_dict(self) -> dict:
        return {"expected": sorted([l.prop, l.positive] for l in self.expected),
                "readings": [r.to_dict() for r in self.readings],
                "expected_met": self.expected_met}

    @classmethod
    def from_dict(cls, d: dict) -> "Verification":
        return cls(frozenset(Literal(p, bool(v)) for p, v in d["expected"]),
                   tuple(PredicateReading.from_dict(r) for r in d["readings"]),
                   bool(d["expected_met"]))


@dataclass(frozen=True)
class StepRecord:
    """One attempted primitive.

    ``executed`` is false when the precondition check stopped it.  ``replan``
    marks the records that incremented ``n``; ``switched_to`` is set when the
    abnormal-state rule chose the next sensing modality.
    """

    index: int
    primitive: str
    executed: bool
    sensing: Optional[str]
    pre_readings: tuple[PredicateReading, ...]
    pose_estimate: Optional[PoseRecord]
    verification: Optional[Verification]
    state_before: frozenset[str]
    state_after: frozenset[str]
    replan: bool = False
    switched_to: Optional[str] = None

    @property
    def failed(self) -> bool:
        """A precheck refusal or a verification mismatch."""
        return not self.executed or (self.verification is not None
                                     and self.verification.mismatch)

    def to_dict(self) -> dict:
        return {
            "type": "step", "index": self.index, "primitive": self.primitive,
            "executed": self.executed, "sensing": self.sensing,
            "pre_readings": [r.to_dict() for r in self.pre_readings],
            "pose_estimate": self.pose_estimate.to_dict() if self.pose_estimate else None,
            "verification": self.verification.to_dict() if self.verification else None,
            "state_before": sorted(self.state_before), "state_after": sorted(self.state_after),
            "replan": self.replan, "switched_to": self.switched_to,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        pe, ver = d.get("pose_estimate"), d.get("verification")
        return cls(
            index=int(d["index"]), primitive=d["primitive"], executed=bool(d["executed"]),
            sensing=d.get("sensing"),
            pre_readings=tuple(PredicateReading.from_dict(r) for r in d["pre_readings"]),
            pose_estimate=PoseRecord.from_dict(pe) if pe else None,
            verification=Verification.from_dict(ver) if ver else None,
            state_before=frozenset(d["state_before"]), state_after=frozenset(d["state_after"]),
            replan=bool(d.get("replan", False)), switched_to=d.get("switched_to"))


@dataclass(frozen=True)
class ExecutionTrace:
    task: TaskSpec
    steps: tuple[StepRecord, ...]
    replan_count: int
    outcome: str
    final_pose_truth_source: Optional[str] = None
    episode: Optional[int] = None

    @property
    def success(self) -> bool:
        return self.outcome == "success"

    def summary(self) -> dict:
        return {"type": "summary", "schema": TRACE_SCHEMA, "task": self.task.to_dict(),
                "replan_count": self.replan_count, "outcome": self.outcome,
                "final_pose_truth_source": self.final_pose_truth_source,
                "episode": self.episode, "n_steps": len(self.steps)}

    def to_records(self) -> list[dict]:
        return [s.to_dict() for s in self.steps] + [self.summary()]

    @classmethod
    def from_records(cls, records: Sequence[dict]) -> "ExecutionTrace":
        if not records or records[-1].get("type") != "summary":
            raise MalformedTrace("trace must end with a summary record")
        summary = records[-1]
        if summary.get("schema") != TRACE_SCHEMA:
            raise MalformedTrace(f"unsupported trace schema {summary.get('schema')!r}")
        try:
            steps = tuple(StepRecord.from_dict(r) for r in records[:-1])
            trace = cls(TaskSpec.from_dict(summary["task"]), steps,
                        int(summary["replan_count"]), summary["outcome"],
                        summary.get("final_pose_truth_source"), summary.get("episode"))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedTrace(f"bad trace record: {exc}") from exc
        if summary.get("n_steps", len(steps)) != len(steps):
            raise MalformedTrace("step count does not match the summary")
        return trace


def write_trace(trace: ExecutionTrace, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in trace.to_records():
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_trace(path: Path) -> ExecutionTrace:
    with open(path, encoding="utf-8") as fh:
        try:
            records = [json.loads(line) for line in fh if line.strip()]
        except json.JSONDecodeError as exc:
            raise MalformedTrace(f"{path}: {exc}") from exc
    return ExecutionTrace.from_records(records)


# --------------------------------------------------------------------------
# modality bookkeeping

def last_mate_modality(steps: Iterable[StepRecord]) -> Optional[str]:
    for s in reversed(list(steps)):
        if s.executed and s.primitive in MATES:
            return MATES[s.primitive]
    return None


def active_modality(steps: Iterable[StepRecord]) -> str:
    """The modality currently in use: the latest executed Mate or explicit switch."""
    for s in reversed(list(steps)):
        if s.switched_to is not None:
            return s.switched_to
        if s.executed and s.primitive in MATES:
            return MATES[s.primitive]
    return VISION


def sensing_modality(primitive: str, steps: Sequence[StepRecord]) -> str:
    if primitive in MATES:
        return MATES[primitive]
    if primitive == "Insert":
        return last_mate_modality(steps) or VISION
    if primitive == "Disassemble":
        return FORCE
    return VISION


def abnormal_state_update(steps: Sequence[StepRecord], state: Iterable[str]) -> tuple[frozenset[str], str]:
    """Belief after a failed expectation, plus the modality it now enables.

    Proximity facts survive, alignment and socket facts are cleared, and
    ``pattern`` is set so that the planner must switch away from the modality
    currently in use (``pattern`` enables Mate_force).
    """
    nxt = _other(active_modality(steps))
    state = frozenset(state) - set(ABNORMAL_CLEARED) - {"pattern"}
    if nxt == FORCE:
        state |= {"pattern"}
    return state, nxt


# --------------------------------------------------------------------------
# sensing helpers

def read_predicates(world: WorldState, modality: str, models: Models,
                    predicates: Iterable[str]) -> tuple[PredicateReading, ...]:
    _, _, feats = perceive(world, modality, models)
    return tuple(classify(models.predicates[p], feats) for p in predicates)


def verify_cross_modal(world: WorldState, expected: Iterable[Literal],
                       models: Models) -> Verification:
    """Check expected effects with the force modality."""
    expected = frozenset(expected)
    order = sorted(expected)
    readings = read_predicates(world, FORCE, models, [l.prop for l in order])
    met = all(r.value == l.positive for r, l in zip(readings, order))
    return Verification(expected, readings, met)


def _belief_from_readings(state: frozenset[str], readings: Iterable[PredicateReading]) -> frozenset[str]:
    state = set(state)
    for r in readings:
        if r.value:
            state.add(r.predicate)
        else:
            state.discard(r.predicate)
    return frozenset(state)


# --------------------------------------------------------------------------
# the loop

def run_task(task: TaskSpec, domain: Domain, world: WorldState, models: Models,
             neural: Sequence[str] = NEURAL_PREDICATES) -> ExecutionTrace:
    """Drive one screw to completion or to the replan threshold.

    The final world is available as ``run_task_world(...)[1]``; this function
    returns only the trace.
    """
    return run_task_world(task, domain, world, models, neural)[0]


def run_task_world(task: TaskSpec, domain: Domain, world: WorldState, models: Models,
                   neural: Sequence[str] = NEURAL_PREDICATES) -> tuple[ExecutionTrace, WorldState]:
    neural = tuple(p for p in domain.predicates if p in set(neural))
    belief = frozenset(task.init)
    steps: list[StepRecord] = []
    n = 0
    last_estimate: Optional[Pose] = None

    def finish(outcome: str) -> tuple[ExecutionTrace, WorldState]:
        source = last_mate_modality(steps) if outcome == "success" else None
        trace = ExecutionTrace(task, tuple(steps), n, outcome, source, world.episode_index)
        return trace, world

    def replan_after_failure(state: frozenset[str]) -> list[str]:
        found = plan(state, task.goal, domain.actions)
        if found is not None:
            return found
        raise PlanningFailure(f"no plan from {sorted(state)}")

    while True:
        prim_list = plan(belief, task.goal, domain.actions)
        if prim_list is None:
            # readings left the belief in a dead end; fall back to the abnormal rule
            belief, nxt = abnormal_state_update(steps, belief)
            steps.append(StepRecord(len(steps), "replan", False, None, (), None, None,
                                    belief, belief, False, nxt))
            prim_list = replan_after_failure(belief)
        if not prim_list and world.disassembled:
            return finish("success")

        for name in prim_list:
            action = domain.action(name)
            before = belief
            modality = sensing_modality(name, steps)
            # negative neural preconditions are reset guards; only positives are sensed
            checks = [l for l in sorted(action.preconditions) if l.positive and l.prop in neural]
            readings = read_predicates(world, modality, models,
                                       [l.prop for l in checks]) if checks else ()
            if any(r.value != l.positive for r, l in zip(readings, checks)):
                belief = _belief_from_readings(belief, readings)
                n += 1
                steps.append(StepRecord(len(steps), name, False, modality, readings, None, None,
                                        before, belief, True))
                break

            pose_rec = None
            command = None
            if name == "Move":
                command = world.coarse_pose
            elif name in MATES:
                obs = sense_vision(world) if MATES[name] == VISION else sense_force(world)
                last_estimate = estimate_pose(models.pose[MATES[name]], obs)
                pose_rec = PoseRecord(MATES[name], tuple(float(v) for v in obs), last_estimate)
                command = last_estimate
            elif name == "Insert":
                command = last_estimate or world.tool_command.shifted(dz=-world.config.hover_height)
            world, _ = execute_primitive(world, name, command)
            belief = apply(belief, action)

            verification = None
            if name in VERIFIED:
                verification = verify_cross_modal(
                    world, [Literal(p) for p in VERIFIED[name]], models)
            if verification is not None and verification.mismatch and not world.disassembled:
                n += 1
                after, nxt = abnormal_state_update(steps, belief)
                steps.append(StepRecord(len(steps), name, True, modality, readings, pose_rec,
                                        verification, before, after, True, nxt))
                belief = after
                break
            steps.append(StepRecord(len(steps), name, True, modality, readings, pose_rec,
                                    verification, before, belief))
            if world.disassembled:
                return finish("success")
        else:
            # the belief reached the goal but the screw is still in: the world's
            # report overrides the belief, then the abnormal rule applies
            n += 1
            before = belief
            belief, nxt = abnormal_state_update(steps, belief - {"disassembled"})
            steps.append(StepRecord(len(steps), "replan", False, None, (), None, None,
                                    before, belief, True, nxt))

        if n >= task.n_th:
            return finish("failure")


# --------------------------------------------------------------------------
# offline validation (the replay command)

def validate_trace(trace: ExecutionTrace, domain: Domain) -> list[str]:
    """Consistency problems in a logged trace; empty when it is well formed."""
    problems = []
    replans = sum(1 for s in trace.steps if s.replan)
    if replans != trace.replan_count:
        problems.append(f"replan_count {trace.replan_count} but {replans} replan records")
    if trace.outcome not in ("success", "failure"):
        problems.append(f"unknown outcome {trace.outcome!r}")
    elif (trace.outcome == "failure") != (trace.replan_count >= trace.task.n_th):
        problems.append("outcome disagrees with the replan threshold")
    names = set(domain.action_names)
    for s in trace.steps:
        if s.primitive == "replan":
            continue
        if s.primitive not in names:
            problems.append(f"step {s.index}: unknown primitive {s.primitive!r}")
            continue
        action = domain.action(s.primitive)
        if s.executed:
            if not satisfies(s.state_before, action.preconditions):
                problems.append(f"step {s.index}: {s.primitive} ran with unmet preconditions")
            if not s.replan:
                try:
                    if apply(s.state_before, action) != s.state_after:
                        problems.append(f"step {s.index}: state_after is not the action effect")
                except PDDLError:
                    pass
        if (s.verification is not None) != (s.executed and s.primitive in VERIFIED):
            problems.append(f"step {s.index}: verification on the wrong step")
        for r in s.pre_readings:
            if not 0.5 <= r.confidence <= 1.0:
                problems.append(f"step {s.index}: confidence {r.confidence} outside [0.5, 1]")
    if trace.success:
        executed = [s for s in trace.steps if s.executed]
        if not executed or executed[-1].primitive != "Disassemble":
            problems.append("success trace does not end with Disassemble")
    return problems

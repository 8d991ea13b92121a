"""Backward learning flow: turn replanned-but-successful traces into labels.

Two kinds of correction come out of a qualifying trace:

* pose: the estimate of the last Mate (the modality that worked) becomes the
  label for every earlier Mate observation of the other modality;
* predicate: among the neural readings of the first failed step, the one with
  the lowest confidence is assumed wrong and its value is flipped.

Samples wait in per-model buckets.  A bucket that reaches the trigger
threshold is drained in insertion order, one SGD step per sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .calibration import pose_dataset, scene_dataset
from .executive import MATES, ExecutionTrace, MalformedTrace
from .perception import (CorrectionSample, Models, PredicateReading, cross_entropy,
                         estimate_pose, pose_loss, update_classifier, update_pose_model)
from .rng import stream
from .world import DisturbanceConfig

DEFAULT_TRIGGER = 75
HOLDOUT_SIZE = 200


def bucket_key(sample: CorrectionSample) -> str:
    return f"{sample.kind}:{sample.target}"


# --------------------------------------------------------------------------
# trace analysis

def select_lowest_confidence(readings: Sequence[PredicateReading],
                             order: Sequence[str]) -> Optional[PredicateReading]:
    """argmin confidence; ties go to the predicate declared first in ``order``."""
    if not readings:
        return None
    rank = {p: i for i, p in enumerate(order)}
    return min(readings, key=lambda r: (r.confidence, rank.get(r.predicate, len(rank))))


def flip(reading: PredicateReading) -> CorrectionSample:
    return CorrectionSample("predicate", reading.predicate, reading.input_snapshot,
                            not reading.value)


def analyze_trace(trace: ExecutionTrace, predicate_order: Sequence[str]) -> list[CorrectionSample]:
    """Correction samples from one trace; empty unless it succeeded after replanning."""
    if not trace.success or trace.replan_count == 0:
        return []
    mates = [s for s in trace.steps if s.executed and s.primitive in MATES]
    if not mates or any(s.pose_estimate is None for s in mates):
        raise MalformedTrace("successful replanned trace without pose-tagged Mate steps")
    failed = [s for s in trace.steps if s.primitive != "replan" and s.failed]
    if not failed:
        raise MalformedTrace("replanned trace without a failed step")

    samples = []
    final = mates[-1].pose_estimate
    for s in mates[:-1]:
        est = s.pose_estimate
        if est.modality != final.modality:
            samples.append(CorrectionSample("pose", est.modality, est.observation, final.pose))

    k = select_lowest_confidence(failed[0].pre_readings, predicate_order)
    if k is not None:
        samples.append(flip(k))
    return samples


# --------------------------------------------------------------------------
# buffer

@dataclass(frozen=True)
class LearningBuffer:
    trigger_threshold: int = DEFAULT_TRIGGER
    buckets: Mapping[str, tuple[CorrectionSample, ...]] = field(default_factory=dict)
    ingested: Mapping[str, int] = field(default_factory=dict)
    drained: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.trigger_threshold < 1:
            raise ValueError("trigger_threshold must be >= 1")

    def count(self, key: str) -> int:
        return len(self.buckets.get(key, ()))

    def ready(self) -> list[str]:
        return sorted(k for k, v in self.buckets.items() if len(v) >= self.trigger_threshold)

    def snapshot(self) -> dict:
        keys = sorted(set(self.buckets) | set(self.ingested))
        return {k: {"pending": self.count(k), "ingested": self.ingested.get(k, 0),
                    "drained": self.drained.get(k, 0)} for k in keys}


def ingest(buffer: LearningBuffer, samples: Sequence[CorrectionSample]) -> LearningBuffer:
    if not samples:
        return buffer
    buckets = dict(buffer.buckets)
    ingested = dict(buffer.ingested)
    for s in samples:
        key = bucket_key(s)
        buckets[key] = buckets.get(key, ()) + (s,)
        ingested[key] = ingested.get(key, 0) + 1
    return replace(buffer, buckets=buckets, ingested=ingested)


@dataclass(frozen=True)
class UpdateReport:
    iteration: int
    models_updated: tuple[str, ...]
    samples_consumed: Mapping[str, int]
    pre_loss: Mapping[str, float]
    post_loss: Mapping[str, float]

    def to_dict(self) -> dict:
        return {"type": "update", "iteration": self.iteration,
                "models_updated": list(self.models_updated),
                "samples_consumed": dict(self.samples_consumed),
                "pre_loss": dict(self.pre_loss), "post_loss": dict(self.post_loss)}


def holdout_loss(models: Models, key: str, holdout) -> float:
    kind, target = key.split(":", 1)
    if kind == "pose":
        obs, truth = holdout
        model = models.pose[target]
        return float(np.mean([pose_loss(estimate_pose(model, o), t) for o, t in zip(obs, truth)]))
    feats, labels = holdout
    clf = models.predicates[target]
    return float(np.mean([cross_entropy(clf, f, y) for f, y in zip(feats, labels[target])]))


def make_holdout(key: str, config: DisturbanceConfig, models: Models, rng,
                 size: int = HOLDOUT_SIZE):
    kind, target = key.split(":", 1)
    if kind == "pose":
        return pose_dataset(config, target, size, rng)
    return scene_dataset(config, models, size, rng, lighting_range=(0.0, 1.0),
                         predicates=(target,))


def maybe_update(buffer: LearningBuffer, models: Models, config: DisturbanceConfig,
                 seed: int = 0, iteration: int = 0, holdout_size: int = HOLDOUT_SIZE,
                 ) -> tuple[Models, LearningBuffer, Optional[UpdateReport]]:
    """Drain every bucket at its threshold and fit one SGD pass over it.

    Held-out sets come from a stream reserved per (seed, round, bucket), so
    they never overlap the samples being learned from.
    """
    ready = buffer.ready()
    if not ready:
        return models, buffer, None
    round_no = sum(buffer.drained.values())
    buckets, drained = dict(buffer.buckets), dict(buffer.drained)
    consumed, pre, post = {}, {}, {}
    for key in ready:
        holdout = make_holdout(key, config, models, stream(seed, "holdout", round_no, key),
                               holdout_size)
        pre[key] = holdout_loss(models, key, holdout)
        for s in buckets[key]:
            if s.kind == "pose":
                models = models.with_pose(update_pose_model(models.pose[s.target], s))
            else:
                models = models.with_predicate(
                    update_classifier(models.predicates[s.target], s))
        post[key] = holdout_loss(models, key, holdout)
        consumed[key] = len(buckets[key])
        drained[key] = drained.get(key, 0) + consumed[key]
        buckets[key] = ()
    report = UpdateReport(iteration, tuple(ready), consumed, pre, post)
    return models, replace(buffer, buckets=buckets, drained=drained), report

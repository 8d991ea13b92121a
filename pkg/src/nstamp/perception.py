"""Learnable perception: affine pose estimators and logistic predicate classifiers.

Models are immutable values.  Every update returns a new model and leaves its
input untouched.

Predicate feature layout (``FEATURE_DIM`` = 7), lengths in centimetres:

    0  |dx|        planar x offset, believed tool position minus estimated head
    1  |dy|        planar y offset
    2  tool gap    believed tool z minus estimated head z
    3  seat gap    estimated head z minus the coarse (seated) head z
    4  modality    1 for vision, 0 for force
    5  lighting    lighting slot of a vision reading, 0 for force
    6  1           constant
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from .world import Pose, wrap_angle

VISION = "vision"
FORCE = "force"
MODALITIES = (VISION, FORCE)
OBS_DIM = {VISION: 5, FORCE: 4}
FEATURE_DIM = 7
FEATURE_NAMES = ("abs_dx", "abs_dy", "tool_gap", "seat_gap", "modality", "lighting", "one")
CM = 100.0
MAX_LOGIT = 30.0
CHECKPOINT_VERSION = 1
LEARNING_RATE = 0.02


class DimensionMismatch(ValueError):
    pass


def _frozen(a, shape=None) -> np.ndarray:
    a = np.array(a, dtype=float)
    if shape is not None and a.shape != shape:
        raise DimensionMismatch(f"expected shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("model parameters must be finite")
    a.setflags(write=False)
    return a


def _vector(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (d,):
        raise DimensionMismatch(f"expected a vector of length {d}, got shape {x.shape}")
    return x


@dataclass(frozen=True, eq=False)
class PoseEstimator:
    modality: str
    weights: np.ndarray
    bias: np.ndarray
    learning_rate: float = LEARNING_RATE

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != 4:
            raise DimensionMismatch(f"pose weights must be 4 x d, got {w.shape}")
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "bias", _frozen(self.bias, (4,)))
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def identity(cls, modality: str, learning_rate: float = LEARNING_RATE) -> "PoseEstimator":
        """Pass-through on the pose slots of the observation."""
        d = OBS_DIM[modality]
        w = np.zeros((4, d))
        w[:, :4] = np.eye(4)
        return cls(modality, w, np.zeros(4), learning_rate)

    def __eq__(self, other) -> bool:
        return (isinstance(other, PoseEstimator) and self.modality == other.modality
                and self.learning_rate == other.learning_rate
                and np.array_equal(self.weights, other.weights)
                and np.array_equal(self.bias, other.bias))


@dataclass(frozen=True, eq=False)
class PredicateClassifier:
    predicate: str
    weights: np.ndarray
    bias: float = 0.0
    learning_rate: float = LEARNING_RATE

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1:
            raise DimensionMismatch(f"classifier weights must be a vector, got {w.shape}")
        object.__setattr__(self, "weights", _frozen(w))
        if not math.isfinite(self.bias):
            raise ValueError("bias must be finite")
        object.__setattr__(self, "bias", float(self.bias))
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def zeros(cls, predicate: str, dim: int = FEATURE_DIM,
              learning_rate: float = LEARNING_RATE) -> "PredicateClassifier":
        return cls(predicate, np.zeros(dim), 0.0, learning_rate)

    def __eq__(self, other) -> bool:
        return (isinstance(other, PredicateClassifier) and self.predicate == other.predicate
                and self.bias == other.bias and self.learning_rate == other.learning_rate
                and np.array_equal(self.weights, other.weights))


@dataclass(frozen=True)
class PredicateReading:
    predicate: str
    value: bool
    confidence: float
    p_true: float
    input_snapshot: tuple[float, ...]

    @property
    def p_false(self) -> float:
        return 1.0 - self.p_true if self.p_true >= 0.5 else self.confidence

    def to_dict(self) -> dict:
        return {"predicate": self.predicate, "value": self.value,
                "confidence": self.confidence, "p_true": self.p_true,
                "features": list(self.input_snapshot)}

    @classmethod
    def from_dict(cls, d: dict) -> "PredicateReading":
        return cls(d["predicate"], bool(d["value"]), float(d["confidence"]),
                   float(d["p_true"]), tuple(float(v) for v in d["features"]))


@dataclass(frozen=True)
class CorrectionSample:
    kind: str                       # "pose" or "predicate"
    target: str                     # modality or predicate name
    input: tuple[float, ...]
    label: Union[Pose, bool]

    def __post_init__(self) -> None:
        object.__setattr__(self, "input", tuple(float(v) for v in self.input))
        if self.kind == "pose":
            if not isinstance(self.label, Pose):
                raise TypeError("pose samples need a Pose label")
        elif self.kind == "predicate":
            if not isinstance(self.label, (bool, np.bool_)):
                raise TypeError("predicate samples need a boolean label")
            object.__setattr__(self, "label", bool(self.label))
        else:
            raise ValueError(f"unknown sample kind {self.kind!r}")

    def to_dict(self) -> dict:
        label = list(self.label.as_array()) if self.kind == "pose" else self.label
        return {"kind": self.kind, "target": self.target, "input": list(self.input),
                "label": label}

    @classmethod
    def from_dict(cls, d: dict) -> "CorrectionSample":
        label = Pose.from_array(d["label"]) if d["kind"] == "pose" else bool(d["label"])
        return cls(d["kind"], d["target"], tuple(d["input"]), label)


# --------------------------------------------------------------------------
# pose estimation

def estimate_pose(model: PoseEstimator, obs) -> Pose:
    obs = _vector(obs, model.dim)
    return Pose.from_array(model.weights @ obs + model.bias)


def pose_residual(estimate: Pose, truth: Pose) -> np.ndarray:
    """``truth - estimate`` with the angle difference wrapped to [-pi, pi)."""
    r = truth.as_array() - estimate.as_array()
    r[3] = wrap_angle(r[3])
    return r


def pose_loss(estimate: Pose, truth: Pose) -> float:
    r = pose_residual(estimate, truth)
    return 0.5 * float(r @ r)


def pose_loss_gradient(model: PoseEstimator, obs, truth: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the half squared pose error w.r.t. (weights, bias)."""
    obs = _vector(obs, model.dim)
    r = pose_residual(estimate_pose(model, obs), truth)
    return -np.outer(r, obs), -r


def update_pose_model(model: PoseEstimator, sample: CorrectionSample) -> PoseEstimator:
    if sample.kind != "pose":
        raise ValueError("pose models only learn from pose samples")
    gw, gb = pose_loss_gradient(model, sample.input, sample.label)
    return replace(model, weights=model.weights - model.learning_rate * gw,
                   bias=model.bias - model.learning_rate * gb)


# --------------------------------------------------------------------------
# predicate classification

def _logit(model: PredicateClassifier, x) -> float:
    x = _vector(x, model.dim)
    z = float(model.weights @ x + model.bias)
    return min(MAX_LOGIT, max(-MAX_LOGIT, z))


def _probabilities(z: float) -> tuple[float, float]:
    # The larger probability lies in [0.5, 1), so 1 - larger is exact and the
    # pair sums to exactly one.
    big = 1.0 / (1.0 + math.exp(-abs(z)))
    small = 1.0 - big
    return (small, big) if z >= 0 else (big, small)


def predict_proba(model: PredicateClassifier, x) -> tuple[float, float]:
    """``(p_false, p_true)``."""
    return _probabilities(_logit(model, x))


def classify(model: PredicateClassifier, x) -> PredicateReading:
    p0, p1 = predict_proba(model, x)
    value = p1 > p0
    return PredicateReading(model.predicate, value, max(p0, p1), p1,
                            tuple(float(v) for v in np.asarray(x, dtype=float)))


def cross_entropy(model: PredicateClassifier, x, label: bool) -> float:
    p0, p1 = predict_proba(model, x)
    return -math.log(p1) if label else -math.log(p0)


def cross_entropy_gradient(model: PredicateClassifier, x, label: bool) -> tuple[np.ndarray, float]:
    x = _vector(x, model.dim)
    _, p1 = predict_proba(model, x)
    g = p1 - float(label)
    return g * x, g


def update_classifier(model: PredicateClassifier, sample: CorrectionSample) -> PredicateClassifier:
    if sample.kind != "predicate":
        raise ValueError("classifiers only learn from predicate samples")
    gw, gb = cross_entropy_gradient(model, sample.input, sample.label)
    return replace(model, weights=model.weights - model.learning_rate * gw,
                   bias=model.bias - model.learning_rate * gb)


def predicate_features(obs, modality: str, estimate: Pose, tool_command: Pose,
                       coarse_pose: Pose) -> np.ndarray:
    lighting = float(np.asarray(obs)[4]) if modality == VISION else 0.0
    return np.array([
        abs(tool_command.x - estimate.x) * CM,
        abs(tool_command.y - estimate.y) * CM,
        (tool_command.z - estimate.z) * CM,
        (estimate.z - coarse_pose.z) * CM,
        1.0 if modality == VISION else 0.0,
        lighting,
        1.0,
    ])


# --------------------------------------------------------------------------
# model sets and checkpoints

@dataclass(frozen=True)
class Models:
    pose: Mapping[str, PoseEstimator]
    predicates: Mapping[str, PredicateClassifier] = field(default_factory=dict)

    def with_pose(self, model: PoseEstimator) -> "Models":
        return replace(self, pose={**self.pose, model.modality: model})

    def with_predicate(self, model: PredicateClassifier) -> "Models":
        return replace(self, predicates={**self.predicates, model.predicate: model})

    def __eq__(self, other) -> bool:
        return (isinstance(other, Models) and dict(self.pose) == dict(other.pose)
                and dict(self.predicates) == dict(other.predicates))


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def dumps_model(model: Union[PoseEstimator, PredicateClassifier]) -> str:
    """Flat text checkpoint: version, kind/name, shape, learning rate, weights, bias."""
    if isinstance(model, PoseEstimator):
        kind, name, rows = "pose", model.modality, model.weights
        bias = model.bias
    else:
        kind, name, rows = "predicate", model.predicate, model.weights[None, :]
        bias = np.array([model.bias])
    lines = [f"nstamp-checkpoint {CHECKPOINT_VERSION}",
             f"{kind} {name}",
             f"shape {rows.shape[0]} {rows.shape[1]}",
             f"learning_rate {model.learning_rate!r}"]
    lines += [_fmt(r) for r in rows]
    lines.append(_fmt(bias))
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> Union[PoseEstimator, PredicateClassifier]:
    lines = [l for l in text.splitlines() if l.strip()]
    magic, version = lines[0].split()
    if magic != "nstamp-checkpoint" or int(version) != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint header {lines[0]!r}")
    kind, name = lines[1].split()
    _, rows, cols = lines[2].split()
    rows, cols = int(rows), int(cols)
    lr = float(lines[3].split()[1])
    w = np.array([[float(v) for v in l.split()] for l in lines[4:4 + rows]])
    if w.shape != (rows, cols):
        raise DimensionMismatch(f"checkpoint weights do not match shape {rows}x{cols}")
    b = np.array([float(v) for v in lines[4 + rows].split()])
    if kind == "pose":
        return PoseEstimator(name, w, b, lr)
    if kind == "predicate":
        return PredicateClassifier(name, w[0], float(b[0]), lr)
    raise ValueError(f"unknown checkpoint kind {kind!r}")


def save_models(models: Models, directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, m in sorted(models.pose.items()):
        (directory / f"pose_{name}.ckpt").write_text(dumps_model(m))
    for name, m in sorted(models.predicates.items()):
        (directory / f"predicate_{name}.ckpt").write_text(dumps_model(m))


def load_models(directory: Path) -> Models:
    pose, preds = {}, {}
    for path in sorted(Path(directory).glob("*.ckpt")):
        m = loads_model(path.read_text())
        if isinstance(m, PoseEstimator):
            pose[m.modality] = m
        else:
            preds[m.predicate] = m
    return Models(pose, preds)


def perceive(world, modality: str, models: Models):
    """Sense once with ``modality`` and derive ``(obs, estimate, features)``."""
    from .world import sense_force, sense_vision

    obs = sense_vision(world) if modality == VISION else sense_force(world)
    est = estimate_pose(models.pose[modality], obs)
    feats = predicate_features(obs, modality, est, world.tool_command, world.coarse_pose)
    return obs, est, feats

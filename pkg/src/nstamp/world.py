"""Ground-truth world for single-screw disassembly episodes.

The world owns the true screw pose and the physical facts (is the socket
engaged, has the screw come out).  Primitives move a tool whose tip drifts
along +x by the accumulated tool wear.  Both sensors are mounted on the tool,
so they measure the screw relative to the real tip and report it through the
commanded (believed) tool frame; the wear offset therefore shows up in the
readings and cancels when the robot acts on them.

Units are metres and radians throughout.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .rng import stream

PRIMITIVES = ("Move", "Mate_vision", "Mate_force", "Insert", "Disassemble")
NEEDS_POSE = ("Move", "Mate_vision", "Mate_force", "Insert")

HOME = (0.3, 0.3, 0.35, 0.0)  # outside the workspace footprint
ENGAGE_DEPTH = 0.005   # head depth inside an engaged socket
BLOCKED_HEIGHT = 0.003  # where a misaligned socket comes to rest
THREAD_LENGTH = 0.010   # screw lift once fully unscrewed
NEAR_RADIUS = 0.05
ABOVE_RADIUS = 0.04
ABOVE_BAND = (0.01, 0.06)


class WorldError(Exception):
    pass


class InvalidPrimitive(WorldError):
    pass


class MissingPose(WorldError):
    pass


def wrap_angle(a: float) -> float:
    """Map an angle to [-pi, pi)."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w < 0.0:
        w += 2.0 * math.pi
    w -= math.pi
    return w if w < math.pi else -math.pi


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float
    theta: float

    def __post_init__(self) -> None:
        vals = (self.x, self.y, self.z, self.theta)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite pose component in {vals}")
        for name in ("x", "y", "z"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.theta])

    @classmethod
    def from_array(cls, a) -> "Pose":
        a = np.asarray(a, dtype=float)
        if a.shape != (4,):
            raise ValueError(f"pose needs 4 components, got shape {a.shape}")
        return cls(*(float(v) for v in a))

    def planar_distance(self, other: "Pose") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)

    def shifted(self, dx=0.0, dy=0.0, dz=0.0) -> "Pose":
        return Pose(self.x + dx, self.y + dy, self.z + dz, self.theta)


@dataclass(frozen=True)
class LightingSchedule:
    """Lighting level per episode index, clipped to [0, 1].

    ``constant`` returns ``value``.  ``sinusoid`` returns
    ``mean + amplitude * sin(2*pi*index/period + phase)`` plus uniform jitter
    in ``[-jitter, jitter]`` drawn from the supplied stream.
    """

    kind: str = "sinusoid"
    value: float = 0.0
    mean: float = 0.5
    amplitude: float = 0.5
    period: float = 60.0
    phase: float = 0.0
    jitter: float = 0.1

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "sinusoid"):
            raise ValueError(f"unknown lighting schedule kind {self.kind!r}")
        if self.kind == "sinusoid" and self.period <= 0:
            raise ValueError("lighting period must be positive")
        if self.jitter < 0:
            raise ValueError("lighting jitter must be >= 0")

    @classmethod
    def constant(cls, value: float) -> "LightingSchedule":
        return cls(kind="constant", value=value)

    def __call__(self, index: int, rng: Optional[np.random.Generator] = None) -> float:
        if self.kind == "constant":
            level = self.value
        else:
            level = self.mean + self.amplitude * math.sin(
                2.0 * math.pi * index / self.period + self.phase)
            if self.jitter and rng is not None:
                level += rng.uniform(-self.jitter, self.jitter)
        return min(1.0, max(0.0, float(level)))


@dataclass(frozen=True)
class DisturbanceConfig:
    lighting: LightingSchedule = field(default_factory=LightingSchedule)
    vision_bias_gain: float = 0.004
    vision_noise_std: float = 0.001
    force_noise_std: float = 0.0005
    wear_rate: float = 0.00002
    insert_tolerance: float = 0.002
    force_capture_radius: float = 0.004
    coarse_radius: float = 0.03
    coarse_min_radius: float = 0.01
    workspace: tuple[float, float, float] = (0.4, 0.4, 0.05)
    hover_height: float = 0.03

    def __post_init__(self) -> None:
        if isinstance(self.lighting, dict):
            object.__setattr__(self, "lighting", LightingSchedule(**self.lighting))
        object.__setattr__(self, "workspace", tuple(float(v) for v in self.workspace))
        nonneg = ("vision_bias_gain", "vision_noise_std", "force_noise_std", "wear_rate",
                  "coarse_min_radius", "hover_height")
        for name in nonneg:
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("insert_tolerance", "force_capture_radius", "coarse_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.coarse_min_radius > self.coarse_radius:
            raise ValueError("coarse_min_radius exceeds coarse_radius")
        if len(self.workspace) != 3 or min(self.workspace) < 0:
            raise ValueError("workspace must be three non-negative extents")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["workspace"] = list(self.workspace)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DisturbanceConfig":
        d = dict(d)
        if "lighting" in d:
            d["lighting"] = LightingSchedule(**d["lighting"])
        return cls(**d)

    @classmethod
    def zero(cls, **overrides) -> "DisturbanceConfig":
        """No bias, no noise, no wear, dark scene."""
        base = dict(lighting=LightingSchedule.constant(0.0), vision_bias_gain=0.0,
                    vision_noise_std=0.0, force_noise_std=0.0, wear_rate=0.0)
        base.update(overrides)
        return cls(**base)


@dataclass
class WorldState:
    config: DisturbanceConfig
    episode_index: int
    true_pose: Pose
    coarse_pose: Pose
    tool_pose: Pose
    tool_command: Pose
    lighting: float
    tool_wear: float
    socketed: bool = False
    disassembled: bool = False
    rng: np.random.Generator = field(default=None, compare=False, repr=False)

    @property
    def head(self) -> Pose:
        """Screw head pose; it rides up with the socket once unscrewed."""
        return self.true_pose.shifted(dz=THREAD_LENGTH if self.disassembled else 0.0)

    @property
    def planar_error(self) -> float:
        return self.tool_pose.planar_distance(self.true_pose)

    @property
    def drift(self) -> np.ndarray:
        return self.tool_pose.as_array()[:3] - self.tool_command.as_array()[:3]


@dataclass(frozen=True)
class PrimitiveOutcome:
    primitive: str
    physical_success: bool
    facts: frozenset[str]


def world_facts(world: WorldState) -> frozenset[str]:
    """Physical truth of the perceptual propositions (the labelling oracle)."""
    tool, head = world.tool_pose, world.head
    planar = tool.planar_distance(head)
    gap = tool.z - head.z
    facts = {"have_coarse_pose"}
    if math.hypot(planar, gap) <= NEAR_RADIUS:
        facts.add("near_screw")
    if planar <= ABOVE_RADIUS and ABOVE_BAND[0] <= gap <= ABOVE_BAND[1]:
        facts.add("above_screw")
    if planar <= world.config.insert_tolerance:
        facts.add("target_aim")
    if world.socketed:
        facts.add("socketed")
    if world.disassembled:
        facts.add("disassembled")
    return frozenset(facts)


def new_episode(config: DisturbanceConfig, episode_index: int, seed: int) -> WorldState:
    if episode_index < 0:
        raise ValueError("episode_index must be >= 0")
    rng = stream(seed, episode_index, "world")
    wx, wy, wz = config.workspace
    true = Pose(rng.uniform(-wx / 2, wx / 2), rng.uniform(-wy / 2, wy / 2),
                rng.uniform(0.0, wz), rng.uniform(-math.pi, math.pi))
    # area-uniform in the annulus [coarse_min_radius, coarse_radius]
    r2 = rng.uniform(config.coarse_min_radius ** 2, config.coarse_radius ** 2)
    ang = rng.uniform(-math.pi, math.pi)
    coarse = true.shifted(math.sqrt(r2) * math.cos(ang), math.sqrt(r2) * math.sin(ang))
    lighting = config.lighting(episode_index, stream(seed, episode_index, "lighting"))
    home = Pose(*HOME)
    return WorldState(
        config=config, episode_index=episode_index, true_pose=true, coarse_pose=coarse,
        tool_pose=home, tool_command=home, lighting=lighting,
        tool_wear=episode_index * config.wear_rate,
        rng=stream(seed, episode_index, "sensors"))


def _move_tool(world: WorldState, command: Pose) -> WorldState:
    actual = command.shifted(dx=world.tool_wear)
    return replace(world, tool_command=command, tool_pose=actual,
                   socketed=world.socketed and world.disassembled)


def execute_primitive(world: WorldState, primitive: str,
                      commanded_pose: Optional[Pose] = None) -> tuple[WorldState, PrimitiveOutcome]:
    """Run one primitive physically.

    Move and the two Mate primitives put the tool at ``commanded_pose`` raised
    by the hover height; the real tip lands ``tool_wear`` further along +x.
    Insert lowers the tool to the commanded head height and engages iff the
    planar tip error is within ``insert_tolerance``.  Disassemble unscrews an
    engaged screw.
    """
    if primitive not in PRIMITIVES:
        raise InvalidPrimitive(f"unknown primitive {primitive!r}")
    if primitive in NEEDS_POSE and commanded_pose is None:
        raise MissingPose(f"{primitive} needs a commanded pose")
    cfg = world.config
    success = True
    if primitive in ("Move", "Mate_vision", "Mate_force"):
        world = _move_tool(world, commanded_pose.shifted(dz=cfg.hover_height))
    elif primitive == "Insert":
        success = world.planar_error <= cfg.insert_tolerance
        tip_z = world.true_pose.z + (-ENGAGE_DEPTH if success else BLOCKED_HEIGHT)
        dz = tip_z - world.tool_pose.z
        world = replace(world, tool_pose=world.tool_pose.shifted(dz=dz),
                        tool_command=world.tool_command.shifted(dz=dz),
                        socketed=world.socketed or success)
    else:
        success = world.socketed and not world.disassembled
        if success:
            world = replace(world, disassembled=True,
                            tool_pose=world.tool_pose.shifted(dz=THREAD_LENGTH),
                            tool_command=world.tool_command.shifted(dz=THREAD_LENGTH))
    return world, PrimitiveOutcome(primitive, success, world_facts(world))


def _relative_reading(world: WorldState) -> np.ndarray:
    head = world.head.as_array()
    head[:3] -= world.drift
    return head


def sense_vision(world: WorldState) -> np.ndarray:
    """Camera reading ``[x, y, z, theta, lighting]``.

    Position is biased by ``vision_bias_gain * lighting`` on x and y and
    carries Gaussian noise of ``vision_noise_std`` on x, y and z.  Each call
    advances the world's sensor stream.
    """
    cfg = world.config
    pose = _relative_reading(world)
    bias = cfg.vision_bias_gain * world.lighting
    pose[0] += bias
    pose[1] += bias
    pose[:3] += world.rng.normal(0.0, 1.0, 3) * cfg.vision_noise_std
    pose[3] = wrap_angle(pose[3])
    return np.append(pose, world.lighting)


def sense_force(world: WorldState) -> np.ndarray:
    """Spiral contact search ``[x, y, z, theta]``.

    Within ``force_capture_radius`` of the screw the search finds the head and
    reports it with Gaussian noise of ``force_noise_std``.  Beyond it no
    engagement is found and the search reports its own start point, the
    commanded tool position, at the head height felt on touchdown.
    """
    cfg = world.config
    noise = world.rng.normal(0.0, 1.0, 3) * cfg.force_noise_std
    if world.planar_error <= cfg.force_capture_radius:
        pose = _relative_reading(world)
    else:
        cmd = world.tool_command
        pose = np.array([cmd.x, cmd.y, world.head.z - world.drift[2], cmd.theta])
    pose[:3] += noise
    pose[3] = wrap_angle(pose[3])
    return pose

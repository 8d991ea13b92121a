"""Synthetic scenes with known labels.

Used twice: to calibrate the deployed predicate classifiers under nominal
conditions before any task runs, and to build held-out sets that score each
continual-learning update.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
from scipy.optimize import minimize

from .perception import (FEATURE_DIM, FORCE, LEARNING_RATE, MODALITIES, VISION, Models, PoseEstimator,
                         PredicateClassifier, estimate_pose, perceive, pose_loss)
from .rng import stream
from .world import (DisturbanceConfig, LightingSchedule, Pose, WorldState, execute_primitive,
                    new_episode, sense_force, sense_vision, world_facts)

NEURAL_PREDICATES = ("near_screw", "above_screw", "target_aim", "socketed", "disassembled")
MAX_MATE_ERROR = 0.008
SCENE_EPISODES = 400


def nominal(config: DisturbanceConfig) -> DisturbanceConfig:
    """The same rig in the conditions the perception stack was calibrated in."""
    return replace(config, lighting=LightingSchedule.constant(0.0), wear_rate=0.0)


def _with_lighting(world: WorldState, rng, lighting_range) -> WorldState:
    lo, hi = lighting_range
    return replace(world, lighting=float(rng.uniform(lo, hi)) if hi > lo else float(lo))


def _place_tip(world: WorldState, err: float, rng) -> WorldState:
    ang = rng.uniform(-math.pi, math.pi)
    cmd = world.true_pose.shifted(err * math.cos(ang) - world.tool_wear, err * math.sin(ang))
    world, _ = execute_primitive(world, "Mate_vision", cmd)
    return world


def random_scene(config: DisturbanceConfig, models: Models, rng: np.random.Generator,
                 lighting_range=(0.0, 0.0)) -> tuple[WorldState, str]:
    """A world frozen at a random phase of an episode plus a sensing modality.

    Force is only offered where its spiral search is valid, i.e. with the tip
    inside the capture radius.
    """
    world = new_episode(config, int(rng.integers(0, SCENE_EPISODES)), int(rng.integers(0, 2**31)))
    world = _with_lighting(world, rng, lighting_range)
    phase = int(rng.integers(0, 5))
    if phase == 0:
        return world, VISION
    world, _ = execute_primitive(world, "Move", world.coarse_pose)
    if phase == 1:
        return world, VISION
    capture = config.force_capture_radius
    modality = MODALITIES[int(rng.integers(0, 2))]
    if modality == FORCE:
        # force localisation starts from a tip already inside the capture radius
        world = _place_tip(world, rng.uniform(0.0, capture), rng)
    obs = sense_vision(world) if modality == VISION else sense_force(world)
    cmd = estimate_pose(models.pose[modality], obs)
    if rng.random() < 0.5:
        # a deliberately misaligned mate for the negative class
        limit = MAX_MATE_ERROR if modality == VISION else capture
        err = rng.uniform(config.insert_tolerance, limit)
        ang = rng.uniform(-math.pi, math.pi)
        cmd = cmd.shifted(err * math.cos(ang), err * math.sin(ang))
    world, _ = execute_primitive(world, "Mate_vision", cmd)
    if phase == 2:
        return world, modality
    world, out = execute_primitive(world, "Insert", world.tool_command)
    if phase == 3 or not out.physical_success:
        return world, FORCE if world.planar_error <= capture else VISION
    world, _ = execute_primitive(world, "Disassemble")
    return world, FORCE


def scene_dataset(config: DisturbanceConfig, models: Models, n: int,
                  rng: np.random.Generator, lighting_range=(0.0, 0.0),
                  predicates=NEURAL_PREDICATES) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    feats = np.empty((n, FEATURE_DIM))
    labels = {p: np.empty(n, dtype=bool) for p in predicates}
    for i in range(n):
        world, modality = random_scene(config, models, rng, lighting_range)
        _, _, feats[i] = perceive(world, modality, models)
        facts = world_facts(world)
        for p in predicates:
            labels[p][i] = p in facts
    return feats, labels


def fit_logistic(x: np.ndarray, y: np.ndarray, l2: float = 1e-4) -> tuple[np.ndarray, float]:
    """L2-regularised logistic regression; the bias is not penalised."""
    y = y.astype(float)
    n, d = x.shape

    def objective(theta):
        w, b = theta[:d], theta[d]
        z = x @ w + b
        loss = np.logaddexp(0.0, z) - y * z
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        g = p - y
        grad = np.append(x.T @ g / n + l2 * w, g.mean())
        return loss.mean() + 0.5 * l2 * w @ w, grad

    res = minimize(objective, np.zeros(d + 1), jac=True, method="L-BFGS-B")
    return res.x[:d], float(res.x[d])


def calibrated_models(config: DisturbanceConfig, seed: int, n: int = 3000,
                      learning_rate: float = LEARNING_RATE,
                      predicates=NEURAL_PREDICATES) -> Models:
    """Identity pose estimators and classifiers fitted to nominal scenes."""
    pose = {m: PoseEstimator.identity(m, learning_rate) for m in MODALITIES}
    models = Models(pose)
    feats, labels = scene_dataset(nominal(config), models, n, stream(seed, "calibration"),
                                  predicates=predicates)
    for p in predicates:
        w, b = fit_logistic(feats, labels[p])
        models = models.with_predicate(PredicateClassifier(p, w, b, learning_rate))
    return models


def pose_dataset(config: DisturbanceConfig, modality: str, n: int, rng: np.random.Generator,
                 lighting_range=(0.0, 1.0)) -> tuple[np.ndarray, list[Pose]]:
    """Observations with the head pose they should map to, in the commanded frame.

    The tool hovers within the force capture radius of the screw.
    """
    obs, truth = [], []
    for _ in range(n):
        world = new_episode(config, int(rng.integers(0, SCENE_EPISODES)), int(rng.integers(0, 2**31)))
        world = _with_lighting(world, rng, lighting_range)
        world = _place_tip(world, rng.uniform(0.0, config.force_capture_radius), rng)
        obs.append(sense_vision(world) if modality == VISION else sense_force(world))
        head = world.head.as_array()
        head[:3] -= world.drift
        truth.append(Pose.from_array(head))
    return np.array(obs), truth


def mean_pose_loss(model: PoseEstimator, obs: np.ndarray, truth: list[Pose]) -> float:
    return float(np.mean([pose_loss(estimate_pose(model, o), t) for o, t in zip(obs, truth)]))


def planar_rmse(model: PoseEstimator, obs: np.ndarray, truth: list[Pose]) -> float:
    err = [np.hypot(*(estimate_pose(model, o).as_array()[:2] - t.as_array()[:2]))
           for o, t in zip(obs, truth)]
    return float(np.sqrt(np.mean(np.square(err))))

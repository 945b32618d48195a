"""Scenario configuration: JSON schema, strict validation, defaults.

The config file is plain JSON with nested sections (time / observer /
planner / scene / camera / noise).  Unknown keys are rejected and every
validation failure names the offending key.  See README for the full
schema and a complete example.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import (
    check_spd,
    NotSPD,
    normalize_quaternion,
    quaternion_from_rotation,
)


class ParseError(ValueError):
    """Config file is not valid JSON."""


class ValidationError(ValueError):
    """Config contents violate the schema; .key names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class ScenarioConfig:
    # time
    dt: float
    t_end: float
    # observer
    window: float                 # integral window length (s)
    stack_size: int               # max admitted pairs per feature
    lambda_tau: float
    kappa1: float
    kappa2: float
    kappa3: float
    admission_interval: float
    anchor_feature: int
    goal_distance_fusion: str     # "anchor" | "average"
    init_d_c_s: np.ndarray
    init_d_c_g: float
    init_d_g_s: np.ndarray
    # planner
    q_c: np.ndarray
    r_c: np.ndarray
    gamma_c: float
    goal_estimate_fusion: str     # "average" | "anchor"
    omega_mode: str               # "zero" | "quaternion_feedback"
    k_omega: float
    # scene
    features_goal: np.ndarray
    features_world: np.ndarray
    plane_indices: tuple[int, int, int]
    goal_position_world: np.ndarray
    goal_quaternion_world: np.ndarray
    camera_position_world: np.ndarray
    camera_quaternion_world: np.ndarray
    fov_half_angle: float
    # camera
    intrinsics: np.ndarray
    # noise
    pixel_sigma: float
    rot_sigma: float
    seed: int


def _reject_unknown(section: str, d: dict, allowed: set[str]) -> None:
    for k in d:
        if k not in allowed:
            key = f"{section}.{k}" if section else k
            raise ValidationError(key, "unknown key")


def _need(section: str, d: dict, key: str):
    if key not in d:
        full = f"{section}.{key}" if section else key
        raise ValidationError(full, "missing required key")
    return d[key]


def _as_float(section: str, d: dict, key: str) -> float:
    v = _need(section, d, key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(f"{section}.{key}", "expected a number")
    return float(v)


def _as_int(section: str, d: dict, key: str) -> int:
    v = _need(section, d, key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValidationError(f"{section}.{key}", "expected an integer")
    return v


def _as_vec3(section: str, d: dict, key: str) -> np.ndarray:
    v = _need(section, d, key)
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3,):
        raise ValidationError(f"{section}.{key}", "expected a 3-vector")
    return arr


def _as_quat(section: str, d: dict, key: str) -> np.ndarray:
    v = _need(section, d, key)
    arr = np.asarray(v, dtype=float)
    if arr.shape != (4,):
        raise ValidationError(f"{section}.{key}", "expected a quaternion [q0, qx, qy, qz]")
    n = np.linalg.norm(arr)
    if abs(n - 1.0) > 1e-6:
        raise ValidationError(f"{section}.{key}", "quaternion is not unit length")
    return normalize_quaternion(arr)


def _as_mat3(section: str, d: dict, key: str) -> np.ndarray:
    v = _need(section, d, key)
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3, 3):
        raise ValidationError(f"{section}.{key}", "expected a 3x3 matrix")
    return arr


def from_dict(raw: dict) -> ScenarioConfig:
    """Build and validate a ScenarioConfig from parsed JSON."""
    if not isinstance(raw, dict):
        raise ValidationError("<root>", "top level must be an object")
    _reject_unknown("", raw, {"time", "observer", "planner", "scene", "camera", "noise"})

    time_sec = _need("", raw, "time")
    _reject_unknown("time", time_sec, {"dt", "t_end"})
    dt = _as_float("time", time_sec, "dt")
    t_end = _as_float("time", time_sec, "t_end")
    if dt <= 0.0:
        raise ValidationError("time.dt", "must be positive")

    obs = _need("", raw, "observer")
    _reject_unknown("observer", obs, {
        "window", "stack_size", "lambda_tau", "kappa1", "kappa2", "kappa3",
        "admission_interval", "anchor_feature", "goal_distance_fusion",
        "init_d_c_s", "init_d_c_g", "init_d_g_s"})
    window = _as_float("observer", obs, "window")
    if window < 2.0 * dt:
        raise ValidationError("observer.window", "must be at least 2*dt")
    if t_end <= window:
        raise ValidationError("time.t_end", "must exceed the observer window")
    stack_size = _as_int("observer", obs, "stack_size")
    if stack_size < 1:
        raise ValidationError("observer.stack_size", "must be at least 1")
    lambda_tau = _as_float("observer", obs, "lambda_tau")
    if lambda_tau <= 0.0:
        raise ValidationError("observer.lambda_tau", "must be positive")
    kappas = {}
    for k in ("kappa1", "kappa2", "kappa3"):
        kappas[k] = _as_float("observer", obs, k)
        if kappas[k] <= 0.0:
            raise ValidationError(f"observer.{k}", "must be positive")
    admission = obs.get("admission_interval", window / 2.0)
    if isinstance(admission, bool) or not isinstance(admission, (int, float)) or admission <= 0.0:
        raise ValidationError("observer.admission_interval", "must be a positive number")
    fusion = obs.get("goal_distance_fusion", "anchor")
    if fusion not in ("anchor", "average"):
        raise ValidationError("observer.goal_distance_fusion",
                              "must be 'anchor' or 'average'")

    plan = _need("", raw, "planner")
    _reject_unknown("planner", plan, {
        "q_c", "r_c", "gamma_c", "goal_estimate_fusion", "omega_mode", "k_omega"})
    q_c = _as_mat3("planner", plan, "q_c")
    r_c = _as_mat3("planner", plan, "r_c")
    try:
        q_c = check_spd(q_c)
        r_c = check_spd(r_c)
    except NotSPD as e:
        raise ValidationError("planner.q_c/r_c", str(e)) from e
    gamma_c = _as_float("planner", plan, "gamma_c")
    if gamma_c < 0.0:
        raise ValidationError("planner.gamma_c", "must be non-negative")
    goal_fusion = plan.get("goal_estimate_fusion", "average")
    if goal_fusion not in ("average", "anchor"):
        raise ValidationError("planner.goal_estimate_fusion",
                              "must be 'average' or 'anchor'")
    omega_mode = plan.get("omega_mode", "zero")
    if omega_mode not in ("zero", "quaternion_feedback"):
        raise ValidationError("planner.omega_mode",
                              "must be 'zero' or 'quaternion_feedback'")
    k_omega = plan.get("k_omega", 0.0)
    if isinstance(k_omega, bool) or not isinstance(k_omega, (int, float)) or k_omega < 0.0:
        raise ValidationError("planner.k_omega", "must be a non-negative number")

    scene_sec = _need("", raw, "scene")
    _reject_unknown("scene", scene_sec, {
        "features_goal", "features_world", "plane_indices",
        "goal_position_world", "goal_quaternion_world",
        "camera_position_world", "camera_quaternion_world", "fov_half_angle"})
    feats_goal = np.asarray(_need("scene", scene_sec, "features_goal"), dtype=float)
    if feats_goal.ndim != 2 or feats_goal.shape[1] != 3 or feats_goal.shape[0] < 4:
        raise ValidationError("scene.features_goal",
                              "expected at least four rows of 3-vectors")
    goal_pos = _as_vec3("scene", scene_sec, "goal_position_world")
    goal_quat = _as_quat("scene", scene_sec, "goal_quaternion_world")
    cam_pos = _as_vec3("scene", scene_sec, "camera_position_world")
    cam_quat = _as_quat("scene", scene_sec, "camera_quaternion_world")

    from .geometry import rotation_from_quaternion  # local to avoid cycle noise
    r_w_g = rotation_from_quaternion(goal_quat)
    derived_world = goal_pos + feats_goal @ r_w_g.T
    if "features_world" in scene_sec:
        feats_world = np.asarray(scene_sec["features_world"], dtype=float)
        if feats_world.shape != feats_goal.shape:
            raise ValidationError("scene.features_world",
                                  "shape must match features_goal")
        if np.abs(feats_world - derived_world).max() > 1e-9:
            raise ValidationError(
                "scene.features_world",
                "inconsistent with features_goal under the goal world pose")
    else:
        feats_world = derived_world

    plane_raw = scene_sec.get("plane_indices", [0, 1, 2])
    plane = tuple(int(i) for i in plane_raw)
    if len(plane) != 3 or len(set(plane)) != 3 or \
            any(i < 0 or i >= feats_goal.shape[0] for i in plane):
        raise ValidationError("scene.plane_indices",
                              "expected three distinct valid feature indices")
    fov = scene_sec.get("fov_half_angle", np.pi / 3.0)
    if isinstance(fov, bool) or not isinstance(fov, (int, float)) or not 0.0 < fov <= np.pi / 2.0:
        raise ValidationError("scene.fov_half_angle", "must be in (0, pi/2]")

    cam = _need("", raw, "camera")
    _reject_unknown("camera", cam, {"intrinsics"})
    intr = _as_mat3("camera", cam, "intrinsics")
    if abs(np.linalg.det(intr)) <= 1e-12:
        raise ValidationError("camera.intrinsics", "matrix must be invertible")

    noise = raw.get("noise", {})
    _reject_unknown("noise", noise, {"pixel_sigma", "rot_sigma", "seed"})
    pixel_sigma = noise.get("pixel_sigma", 0.0)
    rot_sigma = noise.get("rot_sigma", 0.0)
    seed = noise.get("seed", 0)
    if isinstance(pixel_sigma, bool) or not isinstance(pixel_sigma, (int, float)) or pixel_sigma < 0.0:
        raise ValidationError("noise.pixel_sigma", "must be a non-negative number")
    if isinstance(rot_sigma, bool) or not isinstance(rot_sigma, (int, float)) or rot_sigma < 0.0:
        raise ValidationError("noise.rot_sigma", "must be a non-negative number")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0 or seed >= 2 ** 64:
        raise ValidationError("noise.seed", "must be an unsigned 64-bit integer")

    n = feats_goal.shape[0]
    anchor = obs.get("anchor_feature", 0)
    if isinstance(anchor, bool) or not isinstance(anchor, int) or not 0 <= anchor < n:
        raise ValidationError("observer.anchor_feature",
                              "must be a valid feature index")

    def init_vec(key: str) -> np.ndarray:
        v = obs.get(key, 0.0)
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            return np.full(n, float(v))
        arr = np.asarray(v, dtype=float)
        if arr.shape != (n,):
            raise ValidationError(f"observer.{key}",
                                  "expected a scalar or one value per feature")
        return arr

    init_d_c_s = init_vec("init_d_c_s")
    init_d_g_s = init_vec("init_d_g_s")
    init_d_c_g = obs.get("init_d_c_g", 0.0)
    if isinstance(init_d_c_g, bool) or not isinstance(init_d_c_g, (int, float)):
        raise ValidationError("observer.init_d_c_g", "expected a number")

    return ScenarioConfig(
        dt=dt, t_end=t_end,
        window=window, stack_size=stack_size, lambda_tau=lambda_tau,
        kappa1=kappas["kappa1"], kappa2=kappas["kappa2"], kappa3=kappas["kappa3"],
        admission_interval=float(admission), anchor_feature=anchor,
        goal_distance_fusion=fusion,
        init_d_c_s=init_d_c_s, init_d_c_g=float(init_d_c_g), init_d_g_s=init_d_g_s,
        q_c=q_c, r_c=r_c, gamma_c=gamma_c,
        goal_estimate_fusion=goal_fusion, omega_mode=omega_mode,
        k_omega=float(k_omega),
        features_goal=feats_goal, features_world=feats_world,
        plane_indices=plane,
        goal_position_world=goal_pos, goal_quaternion_world=goal_quat,
        camera_position_world=cam_pos, camera_quaternion_world=cam_quat,
        fov_half_angle=float(fov),
        intrinsics=intr,
        pixel_sigma=float(pixel_sigma), rot_sigma=float(rot_sigma), seed=seed,
    )


def load_config(path: str | Path) -> ScenarioConfig:
    """Parse and validate a JSON scenario file."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e}") from e
    return from_dict(raw)


def _look_at_quaternion(eye: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Camera orientation whose optical axis (+z) points from eye to target."""
    z = target - eye
    z = z / np.linalg.norm(z)
    up = np.array([0.0, 1.0, 0.0])
    if abs(z @ up) > 0.99:
        up = np.array([1.0, 0.0, 0.0])
    x = np.cross(up, z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    r = np.stack([x, y, z], axis=1)
    return quaternion_from_rotation(r)


def default_dict() -> dict:
    """The built-in scenario as a plain JSON-compatible dict.

    Four features on the corners of a 1 m square in the world xy-plane, the
    goal 2 m above the plane and looking down at it, and the camera starting
    5 m from the goal at a 45 degree elevation offset so its approach has
    both in-plane and normal velocity components.  The goal sits slightly
    off the square's center, which leaves the unpenalized straight-in
    approach close to the feature line of sight; the conditioning study
    then shows a wide spread across penalty values.
    """
    goal_pos = np.array([0.5, 0.0, 2.0])
    # Goal frame looks down at the plane: z_g = -z_w.
    goal_quat = np.array([0.0, 1.0, 0.0, 0.0])
    offset = 5.0 / np.sqrt(2.0)
    cam_pos = goal_pos + np.array([offset, 0.0, offset])
    cam_quat = _look_at_quaternion(cam_pos, np.zeros(3))
    feats_world = [[0.5, 0.5, 0.0], [0.5, -0.5, 0.0],
                   [-0.5, -0.5, 0.0], [-0.5, 0.5, 0.0]]
    return {
        "time": {"dt": 1e-3, "t_end": 20.0},
        "observer": {
            "window": 0.5,
            "stack_size": 50,
            "lambda_tau": 1e-3,
            "kappa1": 5.0,
            "kappa2": 5.0,
            "kappa3": 5.0,
            "admission_interval": 0.25,
            "anchor_feature": 0,
            "goal_distance_fusion": "anchor",
        },
        "planner": {
            "q_c": np.eye(3).tolist(),
            "r_c": np.eye(3).tolist(),
            "gamma_c": 0.0,
            "goal_estimate_fusion": "average",
            "omega_mode": "zero",
            "k_omega": 0.0,
        },
        "scene": {
            "features_world": feats_world,
            "features_goal": _features_in_goal_frame(
                np.asarray(feats_world), goal_pos, goal_quat).tolist(),
            "plane_indices": [0, 1, 2],
            "goal_position_world": goal_pos.tolist(),
            "goal_quaternion_world": goal_quat.tolist(),
            "camera_position_world": cam_pos.tolist(),
            "camera_quaternion_world": cam_quat.tolist(),
            "fov_half_angle": np.pi / 3.0,
        },
        "camera": {
            "intrinsics": [[800.0, 0.0, 640.0],
                           [0.0, 800.0, 480.0],
                           [0.0, 0.0, 1.0]],
        },
        "noise": {"pixel_sigma": 0.0, "rot_sigma": 0.0, "seed": 0},
    }


def _features_in_goal_frame(feats_world: np.ndarray, goal_pos: np.ndarray,
                            goal_quat: np.ndarray) -> np.ndarray:
    from .geometry import rotation_from_quaternion
    r_w_g = rotation_from_quaternion(goal_quat)
    return (feats_world - goal_pos) @ r_w_g


def default_config() -> ScenarioConfig:
    """Validated built-in default scenario."""
    return from_dict(default_dict())

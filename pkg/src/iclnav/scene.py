"""Ground-truth world model: camera/goal kinematics, planar feature scene,
and synthetic bearing measurements with optional pixel noise.

Frames: world W (inertial), camera C (origin at the principal point,
optical axis +z), goal G (fixed in W).  CameraState carries both the
goal-relative pose (p_c_g, q_c_g) and the world pose (p_w_c, q_w_c);
they are propagated by one consistent RK4 step and their agreement is a
test invariant, not an enforced runtime constraint.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .geometry import (
    normalize_quaternion,
    plane_normal,
    quat_conjugate,
    quat_multiply,
    quat_rate_matrix,
    rotation_from_quaternion,
)


class FeatureLost(RuntimeError):
    """A tracked feature left the field of view; the run cannot continue."""

    def __init__(self, index: int, t: float):
        super().__init__(f"feature {index} left the field of view at t={t:.6f} s")
        self.index = index
        self.t = t


@dataclass(frozen=True)
class FeatureSet:
    """Coplanar tracked features, known in the goal frame and in the world.

    plane_indices names the three features whose world positions define the
    plane normal used by the planner's orthogonality penalty.
    """

    features_goal: np.ndarray    # (n, 3), positions in G
    features_world: np.ndarray   # (n, 3), positions in W
    plane_indices: tuple[int, int, int] = (0, 1, 2)

    def __post_init__(self):
        fg = np.asarray(self.features_goal, dtype=float)
        fw = np.asarray(self.features_world, dtype=float)
        object.__setattr__(self, "features_goal", fg)
        object.__setattr__(self, "features_world", fw)
        if fg.shape[0] < 4:
            raise ValueError("at least four trackable planar features are required")
        if fg.shape != fw.shape or fg.shape[1] != 3:
            raise ValueError("feature arrays must both have shape (n, 3)")
        i, j, k = self.plane_indices
        n = plane_normal(fw[i], fw[j], fw[k])
        off = (fw - fw[j]) @ n
        if np.abs(off).max() > 1e-9:
            raise ValueError("features are not coplanar within 1e-9 m")

    @property
    def count(self) -> int:
        return self.features_goal.shape[0]

    @property
    def normal_world(self) -> np.ndarray:
        """Unit normal of the feature plane, world frame."""
        i, j, k = self.plane_indices
        fw = self.features_world
        return plane_normal(fw[i], fw[j], fw[k])

    @property
    def bearings_goal(self) -> np.ndarray:
        """Unit directions of the features as seen from the goal origin, (n, 3)."""
        d = np.linalg.norm(self.features_goal, axis=1)
        return self.features_goal / d[:, None]

    @property
    def distances_goal(self) -> np.ndarray:
        """Goal-to-feature distances, (n,)."""
        return np.linalg.norm(self.features_goal, axis=1)


@dataclass(frozen=True)
class CameraIntrinsics:
    a: np.ndarray  # (3, 3) pixel projection matrix

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        object.__setattr__(self, "a", a)
        if a.shape != (3, 3) or abs(np.linalg.det(a)) <= 1e-12:
            raise ValueError("intrinsic matrix must be 3x3 and invertible")
        object.__setattr__(self, "a_inv", np.linalg.inv(a))

    a_inv: np.ndarray = field(init=False, repr=False)


@dataclass(frozen=True)
class NoiseModel:
    """Measurement corruption: Gaussian pixel noise on projected features,
    optional small-angle perturbation of the goal rotation.  Draws are a
    pure function of (seed, timestamp), so repeated synthesis at the same
    time is reproducible.
    """

    pixel_sigma: float = 0.0
    rot_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.pixel_sigma < 0.0 or self.rot_sigma < 0.0:
            raise ValueError("noise magnitudes must be non-negative")

    @property
    def enabled(self) -> bool:
        return self.pixel_sigma > 0.0 or self.rot_sigma > 0.0

    def rng_at(self, t: float) -> np.random.Generator:
        t_bits = int(np.float64(t).view(np.uint64))
        return np.random.default_rng([int(self.seed), t_bits])


@dataclass(frozen=True)
class CameraState:
    p_c_g: np.ndarray   # goal position in camera frame (m)
    q_c_g: np.ndarray   # orientation of G w.r.t. C, scalar-first
    p_w_c: np.ndarray   # camera position in world (m)
    q_w_c: np.ndarray   # orientation of C w.r.t. W
    t: float = 0.0

    @cached_property
    def r_c_g(self) -> np.ndarray:
        return rotation_from_quaternion(self.q_c_g)

    @cached_property
    def r_w_c(self) -> np.ndarray:
        return rotation_from_quaternion(self.q_w_c)


@dataclass(frozen=True)
class Measurement:
    """Per-timestep observer inputs: unit bearings to the features and the
    goal, the goal rotation, and the constant goal-frame feature bearings."""

    t: float
    u_c_s: np.ndarray   # (n, 3) unit bearings, camera frame
    u_c_g: np.ndarray   # (3,) unit bearing to the goal
    r_c_g: np.ndarray   # (3, 3)
    u_g_s: np.ndarray   # (n, 3) unit bearings in goal frame, constant


def make_camera_state(p_w_c: np.ndarray, q_w_c: np.ndarray,
                      p_w_g: np.ndarray, q_w_g: np.ndarray,
                      t: float = 0.0) -> CameraState:
    """Build a CameraState from the camera and goal world poses."""
    q_w_c = normalize_quaternion(np.asarray(q_w_c, dtype=float))
    q_w_g = normalize_quaternion(np.asarray(q_w_g, dtype=float))
    r_w_c = rotation_from_quaternion(q_w_c)
    p_c_g = r_w_c.T @ (np.asarray(p_w_g, dtype=float) - np.asarray(p_w_c, dtype=float))
    q_c_g = normalize_quaternion(quat_multiply(quat_conjugate(q_w_c), q_w_g))
    return CameraState(p_c_g=p_c_g, q_c_g=q_c_g,
                       p_w_c=np.asarray(p_w_c, dtype=float), q_w_c=q_w_c, t=t)


def goal_world_pose(state: CameraState) -> tuple[np.ndarray, np.ndarray]:
    """Goal pose implied by the relative and world states; constant when the
    propagation is self-consistent."""
    r_w_c = state.r_w_c
    p_w_g = state.p_w_c + r_w_c @ state.p_c_g
    q_w_g = normalize_quaternion(quat_multiply(state.q_w_c, state.q_c_g))
    return p_w_g, q_w_g


def fov_predicate(p_c: np.ndarray, half_angle: float) -> bool:
    """True iff the point is in front of the camera and the ray angle from
    the optical axis (+z) is at most half_angle (boundary inclusive)."""
    z = p_c[2]
    if z <= 0.0:
        return False
    lateral = float(np.hypot(p_c[0], p_c[1]))
    return bool(np.arctan2(lateral, z) <= half_angle)


def _state_derivative(p_c_g, q_c_g, p_w_c, q_w_c, v_c, omega_cg):
    # omega_cg is the goal-relative angular rate (goal-frame components);
    # the camera's own rate follows from the fixed-goal constraint.
    r_c_g = rotation_from_quaternion(q_c_g)
    omega_cam = -(r_c_g @ omega_cg)
    dp_c_g = -v_c - np.cross(omega_cam, p_c_g)
    dq_c_g = 0.5 * (quat_rate_matrix(q_c_g) @ omega_cg)
    r_w_c = rotation_from_quaternion(q_w_c)
    dp_w_c = r_w_c @ v_c
    dq_w_c = 0.5 * (quat_rate_matrix(q_w_c) @ omega_cam)
    return dp_c_g, dq_c_g, dp_w_c, dq_w_c


def step_dynamics(state: CameraState, v_c: np.ndarray, omega: np.ndarray,
                  dt: float) -> CameraState:
    """Advance the camera one fixed step under constant commanded velocity
    v_c (camera frame) and goal-relative angular rate omega.

    Both the goal-relative pose and the world pose are integrated with RK4
    on their joint kinematics; quaternions are renormalized afterwards.
    Pure translation (omega == 0) has constant derivatives, for which the
    RK4 increment reduces to the exact linear update.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    v_c = np.asarray(v_c, dtype=float)
    omega = np.asarray(omega, dtype=float)

    if not omega.any():
        r_w_c = state.r_w_c
        nxt = CameraState(
            p_c_g=state.p_c_g - v_c * dt,
            q_c_g=state.q_c_g,
            p_w_c=state.p_w_c + (r_w_c @ v_c) * dt,
            q_w_c=state.q_w_c,
            t=state.t + dt,
        )
        # orientation unchanged: carry over the cached rotation matrices
        nxt.__dict__["r_w_c"] = r_w_c
        if "r_c_g" in state.__dict__:
            nxt.__dict__["r_c_g"] = state.__dict__["r_c_g"]
        return nxt

    y0 = (state.p_c_g, state.q_c_g, state.p_w_c, state.q_w_c)

    k1 = _state_derivative(*y0, v_c, omega)
    y1 = tuple(a + 0.5 * dt * b for a, b in zip(y0, k1))
    k2 = _state_derivative(*y1, v_c, omega)
    y2 = tuple(a + 0.5 * dt * b for a, b in zip(y0, k2))
    k3 = _state_derivative(*y2, v_c, omega)
    y3 = tuple(a + dt * b for a, b in zip(y0, k3))
    k4 = _state_derivative(*y3, v_c, omega)

    out = [a + (dt / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
           for a, b1, b2, b3, b4 in zip(y0, k1, k2, k3, k4)]
    return CameraState(
        p_c_g=out[0],
        q_c_g=normalize_quaternion(out[1]),
        p_w_c=out[2],
        q_w_c=normalize_quaternion(out[3]),
        t=state.t + dt,
    )


def feature_positions_camera(state: CameraState, fs: FeatureSet) -> np.ndarray:
    """True feature positions in the camera frame, (n, 3)."""
    r_w_c = state.r_w_c
    return (fs.features_world - state.p_w_c) @ r_w_c


def true_distances(state: CameraState, fs: FeatureSet):
    """Ground-truth magnitudes (d_c_s, d_c_g, d_g_s) for logging."""
    p_c_s = feature_positions_camera(state, fs)
    d_c_s = np.linalg.norm(p_c_s, axis=1)
    d_c_g = float(np.linalg.norm(state.p_c_g))
    return d_c_s, d_c_g, fs.distances_goal.copy()


def _project_bearing(p_c: np.ndarray, k: CameraIntrinsics,
                     pixel_sigma: float, rng) -> np.ndarray:
    """Pixel-plane projection and unprojection of one camera-frame point,
    with optional Gaussian pixel noise."""
    hom = k.a @ p_c
    pix = np.array([hom[0] / hom[2], hom[1] / hom[2], 1.0])
    if pixel_sigma > 0.0:
        pix[:2] += rng.normal(0.0, pixel_sigma, size=2)
    ray = k.a_inv @ pix
    return ray / np.linalg.norm(ray)


DEFAULT_FOV_HALF_ANGLE = np.pi / 3.0


def synthesize_measurement(state: CameraState, fs: FeatureSet,
                           k: CameraIntrinsics, noise: NoiseModel,
                           half_angle: float = DEFAULT_FOV_HALF_ANGLE) -> Measurement:
    """Generate the observer's inputs from ground truth.

    Feature bearings go through the pixel plane (project with the intrinsic
    matrix, optionally perturb, unproject, normalize).  The goal bearing and
    rotation come from ground truth directly, with the same noise switch;
    image-based recovery of those quantities is outside this simulator.

    Raises FeatureLost if any feature fails the field-of-view predicate.
    """
    p_c_s = feature_positions_camera(state, fs)
    z = p_c_s[:, 2]
    lateral = np.hypot(p_c_s[:, 0], p_c_s[:, 1])
    visible = (z > 0.0) & (np.arctan2(lateral, z) <= half_angle)
    if not visible.all():
        raise FeatureLost(int(np.argmin(visible)), state.t)
    rng = noise.rng_at(state.t) if noise.enabled else None

    if noise.pixel_sigma > 0.0:
        u_c_s = np.empty_like(p_c_s)
        for i in range(fs.count):
            u_c_s[i] = _project_bearing(p_c_s[i], k, noise.pixel_sigma, rng)
    else:
        # Exact path: A^-1 A p / |.| reduces to p / |p|.
        u_c_s = p_c_s / np.sqrt(np.einsum("ij,ij->i", p_c_s, p_c_s))[:, None]

    r_c_g = state.r_c_g
    d_c_g = np.linalg.norm(state.p_c_g)
    if d_c_g < 1e-12:
        # At the goal itself the bearing is ill-defined; any unit vector is
        # consistent with d_c_g = 0, pick the optical axis deterministically.
        u_c_g = np.array([0.0, 0.0, 1.0])
    else:
        u_c_g = state.p_c_g / d_c_g
    if noise.pixel_sigma > 0.0 and state.p_c_g[2] > 0.0:
        u_c_g = _project_bearing(state.p_c_g, k, noise.pixel_sigma, rng)
    if noise.rot_sigma > 0.0:
        axis_angle = rng.normal(0.0, noise.rot_sigma, size=3)
        half = 0.5 * axis_angle
        dq = normalize_quaternion(np.concatenate(([1.0], half)))
        r_c_g = rotation_from_quaternion(dq) @ r_c_g

    return Measurement(t=state.t, u_c_s=u_c_s, u_c_g=u_c_g, r_c_g=r_c_g,
                       u_g_s=fs.bearings_goal)

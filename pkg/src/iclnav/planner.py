"""Observability-aware optimal velocity law.

The running cost is a standard quadratic regulation cost plus a penalty on
the velocity component along the feature-plane normal; penalizing motion
along the normal steers the camera into directions that generate parallax
and improve the conditioning of the distance regressor.  The effective
input weight becomes r_bar = r_c + gamma_c * n n^T, and the value-function
matrix solves -S r_bar^-1 S + q_c = 0 in closed form through SPD square
roots.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import check_spd, spd_sqrt
from .observer import ObserverState
from .scene import FeatureSet, Measurement


@dataclass(frozen=True)
class PlannerGains:
    q_c: np.ndarray     # (3, 3) state weight
    r_c: np.ndarray     # (3, 3) input weight
    gamma_c: float      # orthogonality penalty
    n_s: np.ndarray     # (3,) unit feature-plane normal
    n_mat: np.ndarray   # (3, 3) n_s n_s^T
    r_bar: np.ndarray   # (3, 3) penalized input weight
    s_c: np.ndarray     # (3, 3) value-function matrix
    k_s: np.ndarray     # (3, 3) feedback gain r_bar^-1 s_c


@dataclass(frozen=True)
class PlannerDiagnostics:
    j_star: float         # optimal cost-to-go p^T S p
    gamma_s_min: float    # extreme eigenvalues of S r_c^-1 S
    gamma_s_max: float
    cost_accumulated: float = 0.0


def build_gains(q_c: np.ndarray, r_c: np.ndarray, gamma_c: float,
                n_s: np.ndarray) -> PlannerGains:
    """Assemble the feedback gains for given weights and plane normal.

    The value matrix is computed from the explicit square-root formula
    s = rb^(1/2) (rb^(-1/2) q rb^(-1/2))^(1/2) rb^(1/2), which satisfies
    the optimality condition -s rb^-1 s + q = 0 exactly.
    """
    q_c = check_spd(q_c)
    r_c = check_spd(r_c)
    if gamma_c < 0.0:
        raise ValueError("orthogonality penalty must be non-negative")
    n_s = np.asarray(n_s, dtype=float)
    if abs(np.linalg.norm(n_s) - 1.0) > 1e-9:
        raise ValueError("plane normal must be a unit vector")
    n_mat = np.outer(n_s, n_s)
    r_bar = check_spd(r_c + gamma_c * n_mat)
    rb_half = spd_sqrt(r_bar)
    rb_half_inv = np.linalg.inv(rb_half)
    inner = spd_sqrt(rb_half_inv @ q_c @ rb_half_inv.T)
    s_c = rb_half @ inner @ rb_half
    s_c = 0.5 * (s_c + s_c.T)
    k_s = np.linalg.solve(r_bar, s_c)
    return PlannerGains(q_c=q_c, r_c=r_c, gamma_c=float(gamma_c), n_s=n_s,
                        n_mat=n_mat, r_bar=r_bar, s_c=s_c, k_s=k_s)


def control_velocity(g: PlannerGains, p_hat: np.ndarray) -> np.ndarray:
    """Commanded camera velocity toward the estimated goal position."""
    return g.k_s @ p_hat


def world_velocity(v_c: np.ndarray, r_w_c: np.ndarray) -> np.ndarray:
    """Re-express a camera-frame velocity command in the world frame."""
    return r_w_c @ v_c


def goal_estimate(obs: ObserverState, m: Measurement, fs: FeatureSet,
                  fusion: str = "average") -> np.ndarray:
    """Goal position in the camera frame from the current distance estimates.

    Each feature supplies an estimate d_hat * u_c_s - R p_g_s; they are
    combined by arithmetic mean, or taken from the observer's anchor
    feature when fusion == "anchor".
    """
    p_hat_s = obs.d_hat_c_s[:, None] * m.u_c_s           # (n, 3)
    per_feature = p_hat_s - fs.features_goal @ m.r_c_g.T
    if fusion == "average":
        return per_feature.mean(axis=0)
    if fusion == "anchor":
        return per_feature[obs.anchor]
    raise ValueError("fusion must be 'average' or 'anchor'")


def running_cost(g: PlannerGains, p: np.ndarray, v: np.ndarray) -> float:
    """Instantaneous cost: p^T Q p + v^T R v + gamma * <v, n>^2."""
    return float(p @ g.q_c @ p + v @ g.r_c @ v + g.gamma_c * (v @ g.n_s) ** 2)


def diagnostics(g: PlannerGains, p: np.ndarray,
                cost_accumulated: float = 0.0) -> PlannerDiagnostics:
    """Cost-to-go and the spectral bounds used by the disturbance envelope."""
    gamma_s = g.s_c @ np.linalg.solve(g.r_c, g.s_c)
    w = np.linalg.eigvalsh(0.5 * (gamma_s + gamma_s.T))
    return PlannerDiagnostics(
        j_star=float(p @ g.s_c @ p),
        gamma_s_min=float(w[0]),
        gamma_s_max=float(w[-1]),
        cost_accumulated=cost_accumulated,
    )

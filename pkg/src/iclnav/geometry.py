"""Frame and small-matrix kernels: quaternion kinematics, SPD square roots,
condition numbers, plane normals.

Quaternions are scalar-first numpy arrays [q0, qx, qy, qz] on the unit
sphere; rotations are 3x3 arrays with R @ v mapping child-frame vectors
into the parent frame. All functions are pure.
"""
from __future__ import annotations

import numpy as np


class NotSPD(ValueError):
    """Matrix failed the symmetric-positive-definite check."""


class DegenerateGeometry(ValueError):
    """Geometric construction is rank-deficient (e.g. collinear points)."""


IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])

# Relative symmetry tolerance for SPD checks.
_SPD_SYM_TOL = 1e-12
# Smallest singular value below this fraction of the largest counts as zero.
_COND_RANK_TOL = 1e-15


def skew(v: np.ndarray) -> np.ndarray:
    """3x3 cross-product matrix: skew(v) @ w == cross(v, w)."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def normalize_quaternion(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("cannot normalize a near-zero quaternion")
    return q / n


def quat_multiply(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Hamilton product q1 * q2 (composition of rotations, q1 applied last)."""
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rate_matrix(q: np.ndarray) -> np.ndarray:
    """4x3 map from body angular rate to quaternion rate: qdot = 0.5 * Q(q) @ w.

    Rows are [-qv^T] stacked on (q0*I + skew(qv)).  For unit q the map is
    orthonormal: Q^T Q = I.
    """
    q0, qx, qy, qz = q
    return np.array([
        [-qx, -qy, -qz],
        [q0, -qz, qy],
        [qz, q0, -qx],
        [-qy, qx, q0],
    ])


def _quat_derivative(q: np.ndarray, omega: np.ndarray) -> np.ndarray:
    return 0.5 * (quat_rate_matrix(q) @ omega)


def integrate_quaternion(q: np.ndarray, omega: np.ndarray, dt: float) -> np.ndarray:
    """Advance qdot = 0.5 * Q(q) @ omega by one RK4 step, then renormalize.

    omega is the constant body-frame angular rate over the step.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    k1 = _quat_derivative(q, omega)
    k2 = _quat_derivative(q + 0.5 * dt * k1, omega)
    k3 = _quat_derivative(q + 0.5 * dt * k2, omega)
    k4 = _quat_derivative(q + dt * k3, omega)
    return normalize_quaternion(q + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def rotation_from_quaternion(q: np.ndarray) -> np.ndarray:
    """Standard unit-quaternion to rotation-matrix map."""
    q0, qx, qy, qz = q
    xx, yy, zz = qx * qx, qy * qy, qz * qz
    xy, xz, yz = qx * qy, qx * qz, qy * qz
    wx, wy, wz = q0 * qx, q0 * qy, q0 * qz
    ss = q0 * q0 - xx - yy - zz
    return np.array([
        [ss + 2.0 * xx, 2.0 * (xy - wz), 2.0 * (xz + wy)],
        [2.0 * (xy + wz), ss + 2.0 * yy, 2.0 * (yz - wx)],
        [2.0 * (xz - wy), 2.0 * (yz + wx), ss + 2.0 * zz],
    ])


def quaternion_from_rotation(r: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (Shepperd's method), q0 >= 0."""
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s,
                      (r[1, 0] - r[0, 1]) / s])
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array([(r[2, 1] - r[1, 2]) / s,
                      0.25 * s,
                      (r[0, 1] + r[1, 0]) / s,
                      (r[0, 2] + r[2, 0]) / s])
    elif r[1, 1] > r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = np.array([(r[0, 2] - r[2, 0]) / s,
                      (r[0, 1] + r[1, 0]) / s,
                      0.25 * s,
                      (r[1, 2] + r[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = np.array([(r[1, 0] - r[0, 1]) / s,
                      (r[0, 2] + r[2, 0]) / s,
                      (r[1, 2] + r[2, 1]) / s,
                      0.25 * s])
    if q[0] < 0.0:
        q = -q
    return normalize_quaternion(q)


def check_spd(m: np.ndarray) -> np.ndarray:
    """Validate symmetry (relative tol 1e-12) and positive eigenvalues.

    Returns the symmetrized matrix; raises NotSPD otherwise.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotSPD(f"expected a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > _SPD_SYM_TOL * scale:
        raise NotSPD("matrix is not symmetric")
    sym = 0.5 * (m + m.T)
    if np.linalg.eigvalsh(sym).min() <= 0.0:
        raise NotSPD("matrix has a non-positive eigenvalue")
    return sym


def spd_sqrt(m: np.ndarray) -> np.ndarray:
    """Unique SPD square root via eigendecomposition: result @ result == m."""
    sym = check_spd(m)
    w, v = np.linalg.eigh(sym)
    root = (v * np.sqrt(w)) @ v.T
    return 0.5 * (root + root.T)


def condition_number(m: np.ndarray) -> float:
    """Ratio of extreme singular values; +inf when numerically rank-deficient."""
    s = np.linalg.svd(np.asarray(m, dtype=float), compute_uv=False)
    if s[0] == 0.0 or s[-1] < _COND_RANK_TOL * s[0]:
        return np.inf
    return float(s[0] / s[-1])


def plane_normal(p1: np.ndarray, p2: np.ndarray, p3: np.ndarray) -> np.ndarray:
    """Unit normal of the plane through three points: (p1-p2) x (p3-p2), normalized."""
    n = np.cross(p1 - p2, p3 - p2)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        raise DegenerateGeometry("points are collinear; plane normal undefined")
    return n / norm

import numpy as np
import pytest

from iclnav.geometry import (
    DegenerateGeometry,
    NotSPD,
    condition_number,
    integrate_quaternion,
    normalize_quaternion,
    plane_normal,
    quat_multiply,
    quat_rate_matrix,
    quaternion_from_rotation,
    rotation_from_quaternion,
    skew,
    spd_sqrt,
)


def axis_angle_quat(axis, angle):
    """Independent oracle: exponential-map quaternion for a rotation."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2.0)], np.sin(angle / 2.0) * axis])


def random_unit_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def random_spd(rng, n=3, log_range=(-3.0, 3.0)):
    """Random SPD matrix with eigenvalues 10^log_range (condition up to 1e6)."""
    a = rng.normal(size=(n, n))
    qmat, _ = np.linalg.qr(a)
    eigs = 10.0 ** rng.uniform(*log_range, size=n)
    return (qmat * eigs) @ qmat.T


class TestRateMatrix:
    def test_identity_quaternion(self):
        b = quat_rate_matrix(np.array([1.0, 0.0, 0.0, 0.0]))
        assert np.allclose(b[0], 0.0)
        assert np.allclose(b[1:], np.eye(3))

    def test_pure_z_quaternion(self):
        b = quat_rate_matrix(np.array([0.0, 0.0, 0.0, 1.0]))
        assert np.allclose(b[0], [0.0, 0.0, -1.0])
        assert np.allclose(b[1:], skew(np.array([0.0, 0.0, 1.0])))

    def test_orthonormal_columns_random(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            q = random_unit_quat(rng)
            b = quat_rate_matrix(q)
            assert np.abs(b.T @ b - np.eye(3)).max() < 1e-12


class TestIntegrateQuaternion:
    def test_zero_rate_is_identity(self):
        rng = np.random.default_rng(0)
        q = random_unit_quat(rng)
        out = integrate_quaternion(q, np.zeros(3), 0.37)
        assert np.allclose(out, q, atol=1e-15)

    def test_half_turn_about_z(self):
        q = np.array([1.0, 0.0, 0.0, 0.0])
        dt = 1e-3
        for _ in range(1000):
            q = integrate_quaternion(q, np.array([0.0, 0.0, np.pi]), dt)
        expected = axis_angle_quat([0, 0, 1], np.pi)
        # compare rotations: q and -q are the same rotation
        assert min(np.abs(q - expected).max(), np.abs(q + expected).max()) < 1e-6

    def test_result_is_unit(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            q = random_unit_quat(rng)
            w = rng.normal(size=3) * 5.0
            out = integrate_quaternion(q, w, 0.01)
            assert abs(np.linalg.norm(out) - 1.0) < 1e-12

    def test_fourth_order_convergence(self):
        # Against the closed-form axis-angle oracle for constant rate.
        w = np.array([0.4, -1.1, 0.7])
        angle = np.linalg.norm(w)
        q0 = normalize_quaternion(np.array([0.9, 0.1, -0.3, 0.2]))
        exact = quat_multiply(q0, axis_angle_quat(w / angle, angle))

        def global_err(n_steps):
            q = q0
            dt = 1.0 / n_steps
            for _ in range(n_steps):
                q = integrate_quaternion(q, w, dt)
            return min(np.abs(q - exact).max(), np.abs(q + exact).max())

        e1, e2 = global_err(50), global_err(100)
        order = np.log2(e1 / e2)
        assert 3.5 < order < 4.6

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ValueError):
            integrate_quaternion(np.array([1.0, 0, 0, 0]), np.zeros(3), 0.0)


class TestRotationFromQuaternion:
    def test_identity(self):
        assert np.allclose(rotation_from_quaternion(np.array([1.0, 0, 0, 0])), np.eye(3))

    def test_half_turn_about_z(self):
        r = rotation_from_quaternion(np.array([0.0, 0.0, 0.0, 1.0]))
        oracle = np.diag([-1.0, -1.0, 1.0])
        assert np.abs(r - oracle).max() < 1e-15

    def test_homomorphism(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            q1, q2 = random_unit_quat(rng), random_unit_quat(rng)
            lhs = rotation_from_quaternion(quat_multiply(q1, q2))
            rhs = rotation_from_quaternion(q1) @ rotation_from_quaternion(q2)
            assert np.abs(lhs - rhs).max() < 1e-12

    def test_output_is_rotation(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            r = rotation_from_quaternion(random_unit_quat(rng))
            assert np.abs(r.T @ r - np.eye(3)).max() < 1e-9
            assert abs(np.linalg.det(r) - 1.0) < 1e-9

    def test_round_trip_with_from_rotation(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            q = random_unit_quat(rng)
            r = rotation_from_quaternion(q)
            q2 = quaternion_from_rotation(r)
            assert min(np.abs(q - q2).max(), np.abs(q + q2).max()) < 1e-9


class TestSpdSqrt:
    def test_identity(self):
        assert np.allclose(spd_sqrt(np.eye(3)), np.eye(3))

    def test_diagonal(self):
        assert np.allclose(spd_sqrt(np.diag([4.0, 9.0, 25.0])), np.diag([2.0, 3.0, 5.0]))

    def test_multiply_back_random(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            m = random_spd(rng)
            x = spd_sqrt(m)
            assert np.linalg.norm(x @ x - m, "fro") < 1e-10
            # result is itself SPD
            assert np.abs(x - x.T).max() < 1e-12
            assert np.linalg.eigvalsh(x).min() > 0.0

    def test_rejects_asymmetric(self):
        m = np.array([[2.0, 1.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]])
        with pytest.raises(NotSPD):
            spd_sqrt(m)

    def test_rejects_indefinite(self):
        with pytest.raises(NotSPD):
            spd_sqrt(np.diag([1.0, -1.0, 2.0]))


class TestConditionNumber:
    def test_identity(self):
        assert condition_number(np.eye(3)) == 1.0

    def test_diagonal(self):
        assert abs(condition_number(np.diag([10.0, 1.0])) - 10.0) < 1e-12

    def test_rank_one_is_inf(self):
        v = np.array([1.0, 2.0])
        assert condition_number(np.outer(v, v)) == np.inf

    def test_zero_matrix_is_inf(self):
        assert condition_number(np.zeros((2, 2))) == np.inf


class TestPlaneNormal:
    def test_canonical_basis(self):
        n = plane_normal(np.array([1.0, 0, 0]), np.zeros(3), np.array([0.0, 1, 0]))
        assert np.allclose(n, [0.0, 0.0, 1.0])

    def test_collinear_raises(self):
        with pytest.raises(DegenerateGeometry):
            plane_normal(np.array([1.0, 1, 1]), np.array([2.0, 2, 2]),
                         np.array([3.0, 3, 3]))

    def test_unit_norm(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            pts = rng.normal(size=(3, 3)) * 10.0
            try:
                n = plane_normal(*pts)
            except DegenerateGeometry:
                continue
            assert abs(np.linalg.norm(n) - 1.0) < 1e-12

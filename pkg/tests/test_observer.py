import numpy as np
import pytest

from iclnav.geometry import rotation_from_quaternion
from iclnav.observer import (
    DegenerateBearing,
    HistoryStack,
    InsufficientBuffer,
    IntegralWindow,
    NotYetExcited,
    ObserverGains,
    batch_solve,
    make_observer_state,
    observer_step,
    regressor,
    regressor_batch,
    stack_update,
    window_pair,
)
from iclnav.scene import (
    CameraIntrinsics,
    FeatureSet,
    Measurement,
    NoiseModel,
    make_camera_state,
    step_dynamics,
    synthesize_measurement,
    true_distances,
)

IDQ = np.array([1.0, 0.0, 0.0, 0.0])


def make_measurement(u_c_s, u_c_g, r_c_g, u_g_s, t=0.0):
    return Measurement(t=t, u_c_s=np.atleast_2d(u_c_s), u_c_g=np.asarray(u_c_g),
                       r_c_g=np.asarray(r_c_g), u_g_s=np.atleast_2d(u_g_s))


def _scene():
    """Feature square plus goal, camera 5 m out with oblique view."""
    feats_world = np.array([[0.5, 0.5, 0.0], [0.5, -0.5, 0.0],
                            [-0.5, -0.5, 0.0], [-0.5, 0.5, 0.0]])
    goal_pos = np.array([0.5, 0.0, 2.0])
    goal_quat = np.array([0.0, 1.0, 0.0, 0.0])
    r_w_g = rotation_from_quaternion(goal_quat)
    feats_goal = (feats_world - goal_pos) @ r_w_g
    fs = FeatureSet(feats_goal, feats_world)
    cam_pos = goal_pos + np.array([2.5, 0.4, 3.2])
    # camera looks down at the feature plane
    state = make_camera_state(cam_pos, np.array([0.0, 1.0, 0.0, 0.0]),
                              goal_pos, goal_quat)
    intr = CameraIntrinsics(np.eye(3))
    return fs, state, intr


class Driver:
    """Closed-form truth propagation feeding the observer with stage-exact
    measurements, used as an independent test rig."""

    def __init__(self, velocity_fn, dt=1e-3):
        self.fs, self.state, self.intr = _scene()
        self.noise = NoiseModel()
        self.velocity_fn = velocity_fn
        self.dt = dt

    def measure(self, state):
        return synthesize_measurement(state, self.fs, self.intr, self.noise)

    def run(self, obs, gains, n_steps):
        dt = self.dt
        for _ in range(n_steps):
            m = self.measure(self.state)
            v = self.velocity_fn(self.state.t)
            half = step_dynamics(self.state, v, np.zeros(3), dt / 2)
            nxt = step_dynamics(half, v, np.zeros(3), dt / 2)
            obs = observer_step(obs, m, v, gains, dt,
                                self.measure(half), self.measure(nxt))
            self.state = nxt
        return obs


class TestRegressor:
    def test_hand_case(self):
        m = make_measurement([1.0, 0, 0], [0.0, 1, 0], np.eye(3), [1.0, 0, 0])
        sample = regressor(m, 0)
        assert np.allclose(sample.y, [1.0, 0.0], atol=1e-14)
        assert np.allclose(sample.h[:, 0], [1.0, 0, 0])
        assert np.allclose(sample.h[:, 1], [0.0, -1, 0])

    def test_identity_on_synthesized_scene(self):
        fs, state, intr = _scene()
        m = synthesize_measurement(state, fs, intr, NoiseModel())
        d_c_s, d_c_g, d_g_s = true_distances(state, fs)
        for i in range(fs.count):
            y = regressor(m, i).y
            assert np.abs(y * d_g_s[i] - np.array([d_c_s[i], d_c_g])).max() < 1e-9

    def test_batch_matches_single(self):
        fs, state, intr = _scene()
        m = synthesize_measurement(state, fs, intr, NoiseModel())
        batch = regressor_batch(m)
        for i in range(fs.count):
            assert np.allclose(batch[i], regressor(m, i).y, atol=1e-12)

    def test_parallel_bearings_degenerate(self):
        u = np.array([0.0, 0.0, 1.0])
        m = make_measurement(u, u, np.eye(3), [1.0, 0, 0])
        with pytest.raises(DegenerateBearing):
            regressor(m, 0)
        with pytest.raises(DegenerateBearing):
            regressor_batch(m)


class TestWindowPair:
    def _filled_window(self, v=np.array([0.3, -0.1, 0.5]), n_steps=800, dt=1e-3):
        fs, state, intr = _scene()
        w = IntegralWindow(0.5)
        noise = NoiseModel()
        d_g_s = fs.distances_goal
        for k in range(n_steps):
            m = synthesize_measurement(state, fs, intr, noise)
            y = regressor_batch(m)
            w.push(m.t, m.u_c_s[0], m.u_c_g, v, y[0])
            state = step_dynamics(state, v, np.zeros(3), dt)
        return w, state, d_g_s[0], fs, intr

    def test_zero_before_horizon(self):
        w = IntegralWindow(0.5)
        dy, du = window_pair(w, 0.25)
        assert np.array_equal(dy, np.zeros(2))
        assert np.array_equal(du, np.zeros(2))
        # boundary: exactly at the horizon still the zero branch
        dy, du = window_pair(w, 0.5)
        assert np.array_equal(dy, np.zeros(2))

    def test_stationary_camera_gives_zero_pair(self):
        fs, state, intr = _scene()
        w = IntegralWindow(0.1)
        m = synthesize_measurement(state, fs, intr, NoiseModel())
        y = regressor_batch(m)
        for k in range(300):
            w.push(k * 1e-3, m.u_c_s[0], m.u_c_g, np.zeros(3), y[0])
        dy, du = window_pair(w, 0.299)
        assert np.abs(dy).max() < 1e-15
        assert np.abs(du).max() < 1e-15

    def test_identity_against_ground_truth(self):
        w, state, d_g, fs, intr = self._filled_window()
        t = w._t[len(w) - 1]
        dy, du = window_pair(w, t)
        assert np.abs(dy * d_g - du).max() < 1e-6
        assert np.abs(dy).max() > 1e-3  # actually informative

    def test_quadratic_convergence_of_residual(self):
        # halving dt should shrink the identity residual about 4x
        res = {}
        for dt in (2e-3, 1e-3):
            fs, state, intr = _scene()
            w = IntegralWindow(0.5)
            v = np.array([0.3, -0.1, 0.5])
            n_steps = int(round(0.8 / dt))
            for k in range(n_steps):
                m = synthesize_measurement(state, fs, intr, NoiseModel())
                y = regressor_batch(m)
                w.push(m.t, m.u_c_s[0], m.u_c_g, v, y[0])
                state = step_dynamics(state, v, np.zeros(3), dt)
            t = w._t[len(w) - 1]
            dy, du = window_pair(w, t)
            res[dt] = np.abs(dy * fs.distances_goal[0] - du).max()
        ratio = res[2e-3] / res[1e-3]
        assert 2.5 < ratio < 6.5

    def test_insufficient_buffer(self):
        w = IntegralWindow(0.5)
        for k in range(100):
            w.push(1.0 + k * 1e-3, np.array([0.0, 0, 1]), np.array([0.0, 0, 1]),
                   np.zeros(3), np.zeros(2))
        with pytest.raises(InsufficientBuffer):
            window_pair(w, 1.099)  # window start 0.599 predates the buffer

    def test_requires_sample_at_window_end(self):
        w = IntegralWindow(0.1)
        for k in range(300):
            w.push(k * 1e-3, np.array([0.0, 0, 1]), np.array([0.0, 0, 1]),
                   np.zeros(3), np.zeros(2))
        with pytest.raises(InsufficientBuffer):
            window_pair(w, 0.35)  # beyond the newest sample


class TestHistoryStack:
    def test_zero_candidate_rejected(self):
        s = HistoryStack(lambda_tau=1e-3)
        s2 = stack_update(s, np.zeros(2), np.zeros(2), 1.0)
        assert s2.count == 0 and s2.sigma_y == 0.0

    def test_single_term_sums(self):
        s = HistoryStack(lambda_tau=1e-3)
        s2 = stack_update(s, np.array([1.0, 0.0]), np.array([2.0, 0.0]), 1.0)
        assert s2.sigma_y == pytest.approx(1.0)
        assert s2.sigma_u == pytest.approx(2.0)
        assert s2.count == 1
        assert np.allclose(s2.gram2, [[1.0, 0.0], [0.0, 0.0]])

    def test_sigma_y_nondecreasing_and_capped(self):
        rng = np.random.default_rng(12)
        s = HistoryStack(lambda_tau=1e-3, n_max=10)
        prev = 0.0
        for k in range(25):
            s = stack_update(s, rng.normal(size=2), rng.normal(size=2), float(k))
            assert s.sigma_y >= prev
            prev = s.sigma_y
        assert s.count == 10  # summation stops at capacity

    def test_tau_latched_at_threshold_crossing(self):
        s = HistoryStack(lambda_tau=0.5)
        s = stack_update(s, np.array([0.4, 0.0]), np.zeros(2), 1.0)
        assert s.tau_detected is None  # 0.16 <= 0.5
        s = stack_update(s, np.array([0.7, 0.0]), np.zeros(2), 2.0)
        assert s.tau_detected == 2.0
        s = stack_update(s, np.array([0.7, 0.0]), np.zeros(2), 3.0)
        assert s.tau_detected == 2.0  # latched


class TestBatchSolve:
    def test_scalar_division(self):
        s = HistoryStack(lambda_tau=1e-3)
        s = stack_update(s, np.array([np.sqrt(2.0), 0.0]), np.array([3.0 * np.sqrt(2.0), 0.0]), 1.0)
        assert s.sigma_y == pytest.approx(2.0)
        assert batch_solve(s) == pytest.approx(3.0)

    def test_pre_excitation_raises(self):
        with pytest.raises(NotYetExcited):
            batch_solve(HistoryStack(lambda_tau=1e-3))

    def test_noiseless_recovery(self):
        drv = Driver(lambda t: np.array([0.4, -0.2, 0.6]))
        obs = make_observer_state(4, horizon=0.5, n_max=50, lambda_tau=1e-3,
                                  admission_interval=0.25)
        gains = ObserverGains(5.0, 5.0, 5.0)
        obs = drv.run(obs, gains, 1500)
        d_g_s = drv.fs.distances_goal
        for i in range(4):
            assert obs.stacks[i].excited
            assert abs(batch_solve(obs.stacks[i]) - d_g_s[i]) < 1e-6


class TestObserverStep:
    def test_pre_tau_errors_constant_with_exact_init(self):
        drv = Driver(lambda t: np.array([0.3, 0.1, 0.45]))
        d_c_s0, d_c_g0, d_g_s0 = true_distances(drv.state, drv.fs)
        # huge threshold: stacks never excite, exercising the open-loop branch
        obs = make_observer_state(4, horizon=0.5, n_max=50, lambda_tau=1e12,
                                  admission_interval=0.25,
                                  d_hat_c_s=d_c_s0, d_hat_c_g=d_c_g0,
                                  d_hat_g_s=d_g_s0)
        gains = ObserverGains(5.0, 5.0, 5.0)
        obs = drv.run(obs, gains, 1000)
        d_c_s, d_c_g, d_g_s = true_distances(drv.state, drv.fs)
        assert np.abs(obs.d_hat_c_s - d_c_s).max() < 1e-9
        assert abs(obs.d_hat_c_g - d_c_g) < 1e-9
        assert np.abs(obs.d_hat_g_s - d_g_s).max() < 1e-9

    def test_zero_velocity_keeps_estimates(self):
        drv = Driver(lambda t: np.zeros(3))
        obs = make_observer_state(4, horizon=0.5, n_max=50, lambda_tau=1e-3,
                                  admission_interval=0.25, d_hat_c_s=np.ones(4))
        gains = ObserverGains(5.0, 5.0, 5.0)
        obs = drv.run(obs, gains, 600)
        assert np.array_equal(obs.d_hat_c_s, np.ones(4))
        assert obs.d_hat_c_g == 0.0
        assert not any(s.excited for s in obs.stacks)

    def test_post_tau_exponential_decay(self):
        kappa3 = 4.0
        drv = Driver(lambda t: np.array([0.4, -0.2, 0.6]))
        obs = make_observer_state(4, horizon=0.5, n_max=50, lambda_tau=1e-3,
                                  admission_interval=0.25)
        gains = ObserverGains(5.0, 5.0, kappa3)
        d_g_s = drv.fs.distances_goal

        # run until every stack is excited
        obs = drv.run(obs, gains, 520)
        assert all(s.excited for s in obs.stacks)
        tau = obs.tau_times.copy()
        err_tau = d_g_s - obs.d_hat_g_s
        t_tau = drv.state.t

        n_more = 1000
        obs = drv.run(obs, gains, n_more)
        dt_elapsed = drv.state.t - t_tau
        expected = err_tau * np.exp(-kappa3 * dt_elapsed)
        actual = d_g_s - obs.d_hat_g_s
        assert np.abs(actual - expected).max() / np.abs(expected).max() < 0.01

    def test_degenerate_bearing_propagates(self):
        obs = make_observer_state(1, horizon=0.5, n_max=50, lambda_tau=1e-3,
                                  admission_interval=0.25)
        gains = ObserverGains(5.0, 5.0, 5.0)
        u = np.array([0.0, 0.0, 1.0])
        m = make_measurement(u, u, np.eye(3), [1.0, 0, 0])
        with pytest.raises(DegenerateBearing):
            observer_step(obs, m, np.zeros(3), gains, 1e-3)

    def test_held_measurement_mode_runs(self):
        # without stage measurements the step still integrates (coarser)
        drv = Driver(lambda t: np.array([0.3, 0.0, 0.4]))
        obs = make_observer_state(4, horizon=0.5, n_max=50, lambda_tau=1e-3,
                                  admission_interval=0.25)
        gains = ObserverGains(5.0, 5.0, 5.0)
        m = drv.measure(drv.state)
        out = observer_step(obs, m, np.array([0.3, 0.0, 0.4]), gains, 1e-3)
        assert out is obs
        assert len(obs.windows[0]) == 1

    def test_average_fusion_mode(self):
        drv = Driver(lambda t: np.array([0.4, -0.2, 0.6]))
        obs = make_observer_state(4, horizon=0.5, n_max=50, lambda_tau=1e-3,
                                  admission_interval=0.25, fusion="average")
        gains = ObserverGains(5.0, 5.0, 5.0)
        obs = drv.run(obs, gains, 2600)
        _, d_c_g, _ = true_distances(drv.state, drv.fs)
        assert abs(obs.d_hat_c_g - d_c_g) < 1e-3

"""Closed-loop run orchestrator and the orthogonality-penalty sweep.

One run executes the fixed-step loop measure -> estimate -> plan -> move,
logging one row per step.  Everything is deterministic given the scenario
and seed.  The sweep repeats the scenario across penalty values with the
same seed and reports how the conditioning of the per-feature information
accumulator responds.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig
from .observer import (
    DegenerateBearing,
    ObserverGains,
    ingest_measurement,
    make_observer_state,
    observer_step,
    regressor_batch,
)
from .planner import build_gains, control_velocity, diagnostics, goal_estimate, running_cost
from .scene import (
    CameraIntrinsics,
    FeatureLost,
    FeatureSet,
    NoiseModel,
    make_camera_state,
    goal_world_pose,
    step_dynamics,
    synthesize_measurement,
    true_distances,
)


class SimulationAbort(RuntimeError):
    """A run could not continue; .partial holds the rows logged so far."""

    def __init__(self, reason: str, partial: "RunLog"):
        super().__init__(reason)
        self.reason = reason
        self.partial = partial


@dataclass
class RunLog:
    """Per-step history of a closed-loop run plus run-level diagnostics.

    The *_world arrays express camera-to-goal vectors in world axes for
    plotting; the CSV schema carries the camera-frame columns.
    """

    t: np.ndarray
    d_true_c_s: np.ndarray
    d_true_c_g: np.ndarray
    d_true_g_s: np.ndarray
    d_hat_c_s: np.ndarray
    d_hat_c_g: np.ndarray
    d_hat_g_s: np.ndarray
    d_tilde_c_s: np.ndarray
    d_tilde_c_g: np.ndarray
    d_tilde_g_s: np.ndarray
    p_cg: np.ndarray
    p_hat_cg: np.ndarray
    v_c: np.ndarray
    sigma_y: np.ndarray
    sigma_u: np.ndarray
    tau_flag: np.ndarray
    lyap: np.ndarray
    jstar: np.ndarray
    cond: np.ndarray
    cost: np.ndarray
    p_cg_world: np.ndarray
    p_hat_cg_world: np.ndarray
    # identity residuals, one value per row (max over features)
    eq1_res: np.ndarray
    eq3_res: np.ndarray
    eq10_res: np.ndarray
    # run-level metadata
    dt: float
    gamma_c: float
    kappa_min: float
    tau_times: np.ndarray
    gamma_s_min: float
    gamma_s_max: float
    max_quat_norm_err: float
    max_goal_pose_drift: float
    abort_reason: str | None = None

    @property
    def rows(self) -> int:
        return self.t.shape[0]

    @property
    def feature_count(self) -> int:
        return self.d_true_c_s.shape[1]

    @property
    def tau(self) -> float:
        """Time by which every feature's stack is excited (nan if never)."""
        return float(np.max(self.tau_times)) if np.all(np.isfinite(self.tau_times)) else np.nan


@dataclass
class SweepResult:
    gammas: np.ndarray
    avg_cond: np.ndarray
    final_pos_err: np.ndarray
    total_cost: np.ndarray
    failures: list[str | None]


def _scenario_pieces(cfg: ScenarioConfig):
    fs = FeatureSet(cfg.features_goal, cfg.features_world, cfg.plane_indices)
    intr = CameraIntrinsics(cfg.intrinsics)
    noise = NoiseModel(pixel_sigma=cfg.pixel_sigma, rot_sigma=cfg.rot_sigma,
                       seed=cfg.seed)
    state = make_camera_state(cfg.camera_position_world, cfg.camera_quaternion_world,
                              cfg.goal_position_world, cfg.goal_quaternion_world)
    obs = make_observer_state(
        fs.count, cfg.window, cfg.stack_size, cfg.lambda_tau,
        cfg.admission_interval, d_hat_c_s=cfg.init_d_c_s,
        d_hat_c_g=cfg.init_d_c_g, d_hat_g_s=cfg.init_d_g_s,
        anchor=cfg.anchor_feature, fusion=cfg.goal_distance_fusion)
    og = ObserverGains(cfg.kappa1, cfg.kappa2, cfg.kappa3)
    return fs, intr, noise, state, obs, og


def run(cfg: ScenarioConfig) -> RunLog:
    """Execute the scenario's closed loop and return the full log.

    Raises SimulationAbort (with the partial log attached) if a feature
    leaves the field of view or a bearing configuration degenerates.
    """
    fs, intr, noise, state, obs, og = _scenario_pieces(cfg)
    steps = int(round(cfg.t_end / cfg.dt))
    rows = steps + 1
    n = fs.count

    n_world = fs.normal_world
    gains = build_gains(cfg.q_c, cfg.r_c, cfg.gamma_c, state.r_w_c.T @ n_world)
    diag = diagnostics(gains, np.zeros(3))

    # raw per-row storage; identity residuals are vectorized afterwards
    log_t = np.empty(rows)
    d_true_c_s = np.empty((rows, n))
    d_true_c_g = np.empty(rows)
    d_true_g_s = np.empty((rows, n))
    d_hat_c_s = np.empty((rows, n))
    d_hat_c_g = np.empty(rows)
    d_hat_g_s = np.empty((rows, n))
    p_cg = np.empty((rows, 3))
    p_hat_cg = np.empty((rows, 3))
    v_log = np.empty((rows, 3))
    sigma_y = np.empty((rows, n))
    sigma_u = np.empty((rows, n))
    tau_flag = np.empty((rows, n), dtype=np.int64)
    gram2 = np.empty((rows, n, 2, 2))
    cost = np.empty(rows)
    p_cg_world = np.empty((rows, 3))
    p_hat_cg_world = np.empty((rows, 3))
    u_s_log = np.empty((rows, n, 3))
    u_g_log = np.empty((rows, 3))
    r_cg_log = np.empty((rows, 3, 3))
    y_log = np.empty((rows, n, 2))
    p_c_s_log = np.empty((rows, n, 3))

    max_qerr = 0.0
    max_drift = 0.0
    goal_pose0 = goal_world_pose(state)
    abort_reason = None
    logged = 0
    noiseless = not noise.enabled

    omega_zero = np.zeros(3)
    m_next = None  # measurement carried over from the previous step's end stage
    try:
        for k in range(rows):
            t = k * cfg.dt
            m = m_next if m_next is not None else \
                synthesize_measurement(state, fs, intr, noise, cfg.fov_half_angle)
            y_all = regressor_batch(m)
            p_hat = goal_estimate(obs, m, fs, cfg.goal_estimate_fusion)
            if cfg.omega_mode == "quaternion_feedback":
                omega = -cfg.k_omega * state.q_c_g[1:]
                gains = build_gains(cfg.q_c, cfg.r_c, cfg.gamma_c,
                                    state.r_w_c.T @ n_world)
            else:
                omega = omega_zero
            v_c = control_velocity(gains, p_hat)

            d_c_s, d_c_g, d_g_s = true_distances(state, fs)
            r_w_c = state.r_w_c

            log_t[k] = t
            d_true_c_s[k] = d_c_s
            d_true_c_g[k] = d_c_g
            d_true_g_s[k] = d_g_s
            d_hat_c_s[k] = obs.d_hat_c_s
            d_hat_c_g[k] = obs.d_hat_c_g
            d_hat_g_s[k] = obs.d_hat_g_s
            p_cg[k] = state.p_c_g
            p_hat_cg[k] = p_hat
            v_log[k] = v_c
            cost[k] = running_cost(gains, state.p_c_g, v_c)
            p_cg_world[k] = r_w_c @ state.p_c_g
            p_hat_cg_world[k] = r_w_c @ p_hat
            u_s_log[k] = m.u_c_s
            u_g_log[k] = m.u_c_g
            r_cg_log[k] = m.r_c_g
            y_log[k] = y_all
            p_c_s_log[k] = d_c_s[:, None] * m.u_c_s

            qn = abs(np.linalg.norm(state.q_c_g) - 1.0)
            qn = max(qn, abs(np.linalg.norm(state.q_w_c) - 1.0))
            max_qerr = max(max_qerr, qn)
            gp, gq = goal_world_pose(state)
            drift = float(np.linalg.norm(gp - goal_pose0[0]))
            drift = max(drift, float(np.linalg.norm(
                np.minimum(np.abs(gq - goal_pose0[1]), np.abs(gq + goal_pose0[1])))))
            max_drift = max(max_drift, drift)

            if k == steps:
                # final row: fold the last measurement into the stacks so the
                # logged stack columns cover every admission opportunity
                ingest_measurement(obs, m, v_c)
            else:
                half = step_dynamics(state, v_c, omega, 0.5 * cfg.dt)
                nxt = step_dynamics(half, v_c, omega, 0.5 * cfg.dt)
                if noiseless:
                    m_mid = synthesize_measurement(half, fs, intr, noise,
                                                   cfg.fov_half_angle)
                    m_end = synthesize_measurement(nxt, fs, intr, noise,
                                                   cfg.fov_half_angle)
                    m_next = m_end  # same state, same time: reuse next step
                else:
                    m_mid = None
                    m_end = None
                    m_next = None
                obs = observer_step(obs, m, v_c, og, cfg.dt, m_mid, m_end)
                state = nxt

            # stack columns reflect sums through the admissions at time t
            for i, s in enumerate(obs.stacks):
                sigma_y[k, i] = s.sigma_y
                sigma_u[k, i] = s.sigma_u
                tau_flag[k, i] = 1 if s.excited else 0
                gram2[k, i] = s.gram2
            logged = k + 1
    except FeatureLost as e:
        abort_reason = f"feature lost: {e}"
    except DegenerateBearing as e:
        abort_reason = f"degenerate bearing: {e}"

    r = logged
    sl = slice(0, r)
    d_tilde_c_s = d_true_c_s[sl] - d_hat_c_s[sl]
    d_tilde_c_g = d_true_c_g[sl] - d_hat_c_g[sl]
    d_tilde_g_s = d_true_g_s[sl] - d_hat_g_s[sl]
    lyap = 0.5 * ((d_tilde_c_s ** 2).sum(axis=1) + d_tilde_c_g ** 2
                  + (d_tilde_g_s ** 2).sum(axis=1))
    jstar = np.einsum("ki,ij,kj->k", p_cg[sl], gains.s_c, p_cg[sl])

    cond = _batched_cond(gram2[sl])

    # Eq-style identity residuals on the logged ground truth.
    rot_feats = np.einsum("kab,ib->kia", r_cg_log[sl], fs.features_goal)
    eq1 = p_c_s_log[sl] - rot_feats - p_cg[sl][:, None, :]
    eq1_res = np.linalg.norm(eq1, axis=2).max(axis=1)

    pred = y_log[sl] * d_true_g_s[sl][:, :, None]     # (r, n, 2)
    eq3 = np.stack([pred[:, :, 0] - d_true_c_s[sl],
                    pred[:, :, 1] - d_true_c_g[sl][:, None]], axis=2)
    eq3_res = np.abs(eq3).max(axis=(1, 2))

    eq10_res = _window_identity_residual(
        log_t[sl], u_s_log[sl], u_g_log[sl], v_log[sl], y_log[sl],
        fs.distances_goal, cfg.window)

    log = RunLog(
        t=log_t[sl].copy(),
        d_true_c_s=d_true_c_s[sl].copy(), d_true_c_g=d_true_c_g[sl].copy(),
        d_true_g_s=d_true_g_s[sl].copy(),
        d_hat_c_s=d_hat_c_s[sl].copy(), d_hat_c_g=d_hat_c_g[sl].copy(),
        d_hat_g_s=d_hat_g_s[sl].copy(),
        d_tilde_c_s=d_tilde_c_s, d_tilde_c_g=d_tilde_c_g, d_tilde_g_s=d_tilde_g_s,
        p_cg=p_cg[sl].copy(), p_hat_cg=p_hat_cg[sl].copy(), v_c=v_log[sl].copy(),
        sigma_y=sigma_y[sl].copy(), sigma_u=sigma_u[sl].copy(),
        tau_flag=tau_flag[sl].copy(),
        lyap=lyap, jstar=jstar, cond=cond, cost=cost[sl].copy(),
        p_cg_world=p_cg_world[sl].copy(), p_hat_cg_world=p_hat_cg_world[sl].copy(),
        eq1_res=eq1_res, eq3_res=eq3_res, eq10_res=eq10_res,
        dt=cfg.dt, gamma_c=cfg.gamma_c,
        kappa_min=min(cfg.kappa1, cfg.kappa2, cfg.kappa3),
        tau_times=obs.tau_times,
        gamma_s_min=diag.gamma_s_min, gamma_s_max=diag.gamma_s_max,
        max_quat_norm_err=max_qerr, max_goal_pose_drift=max_drift,
        abort_reason=abort_reason,
    )
    if abort_reason is not None:
        raise SimulationAbort(abort_reason, log)
    return log


def _batched_cond(gram2: np.ndarray) -> np.ndarray:
    """Condition numbers of stacked symmetric PSD 2x2 matrices, (r, n)."""
    a = gram2[..., 0, 0]
    b = gram2[..., 0, 1]
    d = gram2[..., 1, 1]
    tr = a + d
    disc = np.sqrt(np.maximum((a - d) ** 2 + 4.0 * b * b, 0.0))
    lo = 0.5 * (tr - disc)
    hi = 0.5 * (tr + disc)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(lo > 1e-15 * np.maximum(hi, 1e-300), hi / lo, np.inf)
    out = np.where(hi <= 0.0, np.inf, out)
    return out


def _window_identity_residual(t, u_s, u_g, v, y, d_g, horizon) -> np.ndarray:
    """Residual | dy * d_g - du | per row, max over features.

    Recomputes the windowed pair on the logged grid with the same
    trapezoidal rule the observer uses (velocity held constant over each
    interval, linear interpolation at the window start).
    """
    r, n = y.shape[:2]
    out = np.zeros(r)
    if r < 2:
        return out
    # integrand nodes: g[k, i, :] with the velocity of interval [k, k+1]
    gl_s = np.einsum("kij,kj->ki", u_s[:-1], v[:-1])     # left nodes
    gr_s = np.einsum("kij,kj->ki", u_s[1:], v[:-1])      # right nodes, same v
    gl_g = np.einsum("kj,kj->k", u_g[:-1], v[:-1])
    gr_g = np.einsum("kj,kj->k", u_g[1:], v[:-1])
    dt_seg = (t[1:] - t[:-1])[:, None]
    seg_s = 0.5 * (gl_s + gr_s) * dt_seg
    seg_g = 0.5 * (gl_g + gr_g) * dt_seg[:, 0]
    pre_s = np.concatenate([np.zeros((1, n)), np.cumsum(seg_s, axis=0)])
    pre_g = np.concatenate([[0.0], np.cumsum(seg_g)])

    active = t > horizon + 1e-12
    if not active.any():
        return out
    idx = np.nonzero(active)[0]
    t_star = t[idx] - horizon
    j = np.searchsorted(t[:-1], t_star + 1e-12 * np.maximum(1.0, t[idx])) - 1
    j = np.clip(j, 0, r - 2)
    h = t[j + 1] - t[j]
    a = np.clip((t_star - t[j]) / h, 0.0, 1.0)

    y_star = (1.0 - a)[:, None, None] * y[j] + a[:, None, None] * y[j + 1]
    us_star = (1.0 - a)[:, None, None] * u_s[j] + a[:, None, None] * u_s[j + 1]
    ug_star = (1.0 - a)[:, None] * u_g[j] + a[:, None] * u_g[j + 1]
    g_star_s = np.einsum("kij,kj->ki", us_star, v[j])
    g_star_g = np.einsum("kj,kj->k", ug_star, v[j])
    gl_s_j = np.einsum("kij,kj->ki", u_s[j], v[j])
    gl_g_j = np.einsum("kj,kj->k", u_g[j], v[j])
    p_star_s = pre_s[j] + 0.5 * (gl_s_j + g_star_s) * (t_star - t[j])[:, None]
    p_star_g = pre_g[j] + 0.5 * (gl_g_j + g_star_g) * (t_star - t[j])

    dy = y[idx] - y_star                                  # (m, n, 2)
    du_s = -(pre_s[idx] - p_star_s)                       # (m, n)
    du_g = -(pre_g[idx] - p_star_g)                       # (m,)
    res1 = dy[:, :, 0] * d_g[None, :] - du_s
    res2 = dy[:, :, 1] * d_g[None, :] - du_g[:, None]
    out[idx] = np.maximum(np.abs(res1), np.abs(res2)).max(axis=1)
    return out


def post_tau_mask(log: RunLog) -> np.ndarray:
    """Boolean (rows, features): step at/after that feature's excitation."""
    return log.tau_flag.astype(bool)


def average_condition(log: RunLog) -> float:
    """Sweep metric: mean condition number of the 2x2 information Gram over
    post-excitation rows and features, finite values only (the Gram is
    rank-deficient until a second independent pair is admitted)."""
    mask = post_tau_mask(log) & np.isfinite(log.cond)
    if not mask.any():
        return np.nan
    return float(log.cond[mask].mean())


def sweep_gamma(cfg: ScenarioConfig, gammas) -> SweepResult:
    """Run the scenario once per orthogonality penalty (same seed) and
    collect the conditioning metric, final goal error, and total cost.

    Failures of individual runs are recorded in .failures and produce NaN
    metric rows; they do not abort the sweep.
    """
    gammas = np.asarray(list(gammas), dtype=float)
    if gammas.size == 0:
        raise ValueError("sweep requires at least one gamma value")
    if (gammas < 0.0).any():
        raise ValueError("gamma values must be non-negative")

    avg_cond = np.full(gammas.size, np.nan)
    final_err = np.full(gammas.size, np.nan)
    total_cost = np.full(gammas.size, np.nan)
    failures: list[str | None] = [None] * gammas.size
    for i, g in enumerate(gammas):
        cfg_g = dataclasses.replace(cfg, gamma_c=float(g))
        try:
            log = run(cfg_g)
        except SimulationAbort as e:
            failures[i] = e.reason
            continue
        avg_cond[i] = average_condition(log)
        final_err[i] = float(np.linalg.norm(log.p_cg[-1]))
        total_cost[i] = float(np.trapezoid(log.cost, log.t))
    return SweepResult(gammas=gammas, avg_cond=avg_cond,
                       final_pos_err=final_err, total_cost=total_cost,
                       failures=failures)

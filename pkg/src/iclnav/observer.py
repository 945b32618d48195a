"""Distance observer: bearing regressor, windowed integral relation,
excitation-monitored history stack, and the three estimate update laws.

Per tracked feature the observer maintains three scalar distance
estimates (camera-to-feature, camera-to-goal, goal-to-feature).  Before
the history stack crosses its excitation threshold the estimates are
propagated open loop from the measured bearings and the known camera
velocity; afterwards a correction term pulls them toward the values
implied by the accumulated integral relations, which makes the
estimation errors decay exponentially.
"""
from __future__ import annotations

from dataclasses import dataclass, replace, field

import numpy as np

from .scene import Measurement

# Candidate pairs with less information than this are never admitted.
EPS_INFO = 1e-8
# Regressor degeneracy: smallest singular value of the bearing matrix.
_MIN_BEARING_SV = 1e-8


class DegenerateBearing(RuntimeError):
    """Feature, goal, and camera bearings are collinear; regressor undefined."""


class InsufficientBuffer(RuntimeError):
    """The sample buffer does not cover the requested integration window."""


class NotYetExcited(RuntimeError):
    """History stack has not crossed its excitation threshold yet."""


@dataclass(frozen=True)
class RegressorSample:
    """Regressor value at one timestep: y maps the constant goal-to-feature
    distance to (camera-to-feature, camera-to-goal) distances."""

    t: float
    y: np.ndarray  # (2,)
    h: np.ndarray  # (3, 2) bearing matrix [u_c_s, -u_c_g], kept for diagnostics


def regressor_batch(m: Measurement) -> np.ndarray:
    """Regressor rows for all features of a measurement, (n, 2).

    y_i = (H_i^T H_i)^-1 H_i^T R u_g_i with H_i = [u_c_s_i, -u_c_g]; the
    2x2 normal matrix is inverted in closed form.  The result is memoized
    on the (immutable) measurement.
    """
    cached = m.__dict__.get("_regressor_rows")
    if cached is not None:
        return cached
    u_s = m.u_c_s
    u_g = m.u_c_g
    c = -(u_s @ u_g)                      # off-diagonal of H^T H
    det = 1.0 - c * c                     # product of singular values squared
    if np.min(det) <= _MIN_BEARING_SV ** 2:
        raise DegenerateBearing(
            "feature and goal bearings are (near-)parallel at "
            f"t={m.t:.6f} s")
    ru = m.u_g_s @ m.r_c_g.T              # (n, 3) rotated goal-frame bearings
    b1 = np.einsum("ij,ij->i", u_s, ru)
    b2 = -(ru @ u_g)
    y1 = (b1 - c * b2) / det
    y2 = (b2 - c * b1) / det
    y = np.stack([y1, y2], axis=1)
    m.__dict__["_regressor_rows"] = y
    return y


def regressor(m: Measurement, i: int) -> RegressorSample:
    """Regressor for feature i; raises DegenerateBearing when the feature
    and goal bearings are collinear."""
    u_s = m.u_c_s[i]
    u_g = m.u_c_g
    c = -float(u_s @ u_g)
    if 1.0 - c * c <= _MIN_BEARING_SV ** 2:
        raise DegenerateBearing(
            f"feature {i} bearing is (near-)parallel to the goal bearing")
    h = np.stack([u_s, -u_g], axis=1)
    rhs = h.T @ (m.r_c_g @ m.u_g_s[i])
    y = np.linalg.solve(h.T @ h, rhs)
    return RegressorSample(t=m.t, y=y, h=h)


class IntegralWindow:
    """Sliding buffer of one feature's samples for the windowed integral
    relation.

    Each pushed sample is (t, u_c_s, u_c_g, v_c, y) where v_c is the
    commanded velocity held constant until the next sample.  A running
    trapezoidal prefix integral of [u_c_s^T; u_c_g^T] v_c makes window
    evaluation O(1) regardless of window length.
    """

    def __init__(self, horizon: float):
        if horizon <= 0.0:
            raise ValueError("window horizon must be positive")
        self.horizon = float(horizon)
        self._cap = 1024
        self._n = 0
        self._t = np.empty(self._cap)
        self._y = np.empty((self._cap, 2))
        self._u_s = np.empty((self._cap, 3))
        self._u_g = np.empty((self._cap, 3))
        self._v = np.empty((self._cap, 3))
        self._prefix = np.empty((self._cap, 2))

    def __len__(self) -> int:
        return self._n

    def _grow(self) -> None:
        self._cap *= 2
        for name in ("_t", "_y", "_u_s", "_u_g", "_v", "_prefix"):
            old = getattr(self, name)
            new = np.empty((self._cap,) + old.shape[1:])
            new[: self._n] = old[: self._n]
            setattr(self, name, new)

    def push(self, t: float, u_c_s: np.ndarray, u_c_g: np.ndarray,
             v_c: np.ndarray, y: np.ndarray) -> None:
        n = self._n
        if n == self._cap:
            self._grow()
        if n > 0 and t <= self._t[n - 1]:
            raise ValueError("sample timestamps must be strictly increasing")
        self._t[n] = t
        self._y[n] = y
        self._u_s[n] = u_c_s
        self._u_g[n] = u_c_g
        self._v[n] = v_c
        if n == 0:
            self._prefix[n] = 0.0
        else:
            # Interval [t_{n-1}, t_n] uses the velocity stored at its left node.
            v_prev = self._v[n - 1]
            g_left = np.array([self._u_s[n - 1] @ v_prev, self._u_g[n - 1] @ v_prev])
            g_right = np.array([u_c_s @ v_prev, u_c_g @ v_prev])
            self._prefix[n] = self._prefix[n - 1] + 0.5 * (g_left + g_right) * (t - self._t[n - 1])
        self._n = n + 1


def window_pair(w: IntegralWindow, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the windowed integral relation at time t.

    Returns (dy, du): the regressor increment over the window and the
    integrated bearing-velocity term, both zero for t <= horizon.  Raises
    InsufficientBuffer when t exceeds the horizon but the buffer does not
    cover [t - horizon, t].
    """
    if t <= w.horizon:
        return np.zeros(2), np.zeros(2)
    n = w._n
    snap = 1e-12 * max(1.0, abs(t))
    if n == 0 or abs(w._t[n - 1] - t) > snap:
        raise InsufficientBuffer(f"no sample at the window end t={t!r}")
    t_star = t - w.horizon
    if w._t[0] > t_star + snap:
        raise InsufficientBuffer(
            f"buffer starts at {w._t[0]!r}, after window start {t_star!r}")

    j = int(np.searchsorted(w._t[:n], t_star + snap)) - 1
    if j < 0:
        j = 0
    if abs(w._t[j] - t_star) <= snap:
        y_star = w._y[j]
        p_star = w._prefix[j]
    elif j + 1 < n and abs(w._t[j + 1] - t_star) <= snap:
        y_star = w._y[j + 1]
        p_star = w._prefix[j + 1]
    else:
        # Linear interpolation inside interval [t_j, t_{j+1}] which carries
        # the velocity stored at its left node.
        h = w._t[j + 1] - w._t[j]
        a = (t_star - w._t[j]) / h
        y_star = (1.0 - a) * w._y[j] + a * w._y[j + 1]
        u_s_star = (1.0 - a) * w._u_s[j] + a * w._u_s[j + 1]
        u_g_star = (1.0 - a) * w._u_g[j] + a * w._u_g[j + 1]
        v = w._v[j]
        g_left = np.array([w._u_s[j] @ v, w._u_g[j] @ v])
        g_star = np.array([u_s_star @ v, u_g_star @ v])
        p_star = w._prefix[j] + 0.5 * (g_left + g_star) * (t_star - w._t[j])

    dy = w._y[n - 1] - y_star
    du = -(w._prefix[n - 1] - p_star)
    return dy, du


@dataclass(frozen=True)
class HistoryStack:
    """Accumulated sums of admitted window pairs plus the excitation state.

    sigma_y and sigma_u are the scalar sums of dy^T dy and dy^T du;
    gram2 accumulates the 2x2 outer products dy dy^T for conditioning
    diagnostics.  tau_detected records the first time sigma_y exceeded
    lambda_tau.
    """

    lambda_tau: float
    n_max: int = 50
    sigma_y: float = 0.0
    sigma_u: float = 0.0
    gram2: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    count: int = 0
    tau_detected: float | None = None

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError("history stack capacity must be at least 1")
        if self.lambda_tau <= 0.0:
            raise ValueError("excitation threshold must be positive")

    @property
    def excited(self) -> bool:
        return self.tau_detected is not None


def stack_update(s: HistoryStack, dy: np.ndarray, du: np.ndarray, t: float,
                 eps_info: float = EPS_INFO) -> HistoryStack:
    """Admit a candidate window pair into the stack.

    Zero-information candidates (dy^T dy <= eps_info) are rejected, and the
    stack stops accumulating once it holds n_max samples.  The excitation
    time is latched when sigma_y first exceeds lambda_tau.
    """
    info = float(dy @ dy)
    if s.count >= s.n_max or info <= eps_info:
        return s
    sigma_y = s.sigma_y + info
    sigma_u = s.sigma_u + float(dy @ du)
    gram2 = s.gram2 + np.outer(dy, dy)
    tau = s.tau_detected
    if tau is None and sigma_y > s.lambda_tau:
        tau = t
    return replace(s, sigma_y=sigma_y, sigma_u=sigma_u, gram2=gram2,
                   count=s.count + 1, tau_detected=tau)


def batch_solve(s: HistoryStack) -> float:
    """Goal-to-feature distance implied by the accumulated sums.

    Only valid once the stack is excited; raises NotYetExcited before that.
    """
    if not s.excited:
        raise NotYetExcited("history stack below excitation threshold")
    return s.sigma_u / s.sigma_y


@dataclass(frozen=True)
class ObserverGains:
    kappa1: float
    kappa2: float
    kappa3: float

    def __post_init__(self):
        if min(self.kappa1, self.kappa2, self.kappa3) <= 0.0:
            raise ValueError("observer gains must be positive")


@dataclass
class ObserverState:
    """All per-feature estimates plus their windows and history stacks.

    The goal-distance estimate d_hat_c_g is a single scalar; its correction
    is fused from per-feature data either through a designated anchor
    feature or by averaging (see fusion).
    """

    d_hat_c_s: np.ndarray          # (n,) camera-to-feature estimates
    d_hat_c_g: float               # camera-to-goal estimate
    d_hat_g_s: np.ndarray          # (n,) goal-to-feature estimates
    stacks: list[HistoryStack]
    windows: list[IntegralWindow]
    next_admit_t: np.ndarray       # (n,) per-feature admission schedule
    admission_interval: float
    anchor: int = 0
    fusion: str = "anchor"

    def __post_init__(self):
        if self.fusion not in ("anchor", "average"):
            raise ValueError("fusion must be 'anchor' or 'average'")
        if not 0 <= self.anchor < len(self.stacks):
            raise ValueError("anchor feature index out of range")
        if self.admission_interval <= 0.0:
            raise ValueError("admission interval must be positive")

    @property
    def feature_count(self) -> int:
        return self.d_hat_c_s.shape[0]

    @property
    def tau_times(self) -> np.ndarray:
        """Per-feature excitation times, nan where not yet excited."""
        return np.array([np.nan if s.tau_detected is None else s.tau_detected
                         for s in self.stacks])


def make_observer_state(n_features: int, horizon: float, n_max: int,
                        lambda_tau: float, admission_interval: float,
                        d_hat_c_s: np.ndarray | None = None,
                        d_hat_c_g: float = 0.0,
                        d_hat_g_s: np.ndarray | None = None,
                        anchor: int = 0, fusion: str = "anchor") -> ObserverState:
    """Fresh observer with zero-initialized estimates unless overridden."""
    zeros = np.zeros(n_features)
    return ObserverState(
        d_hat_c_s=zeros.copy() if d_hat_c_s is None else np.asarray(d_hat_c_s, float).copy(),
        d_hat_c_g=float(d_hat_c_g),
        d_hat_g_s=zeros.copy() if d_hat_g_s is None else np.asarray(d_hat_g_s, float).copy(),
        stacks=[HistoryStack(lambda_tau=lambda_tau, n_max=n_max) for _ in range(n_features)],
        windows=[IntegralWindow(horizon) for _ in range(n_features)],
        next_admit_t=np.full(n_features, admission_interval),
        admission_interval=admission_interval,
        anchor=anchor,
        fusion=fusion,
    )


def _stage_terms(m: Measurement, v_c: np.ndarray):
    """Per-measurement quantities entering the estimate derivatives."""
    y = regressor_batch(m)                    # (n, 2)
    eta1 = -(m.u_c_s @ v_c)                   # (n,)
    eta2 = -float(m.u_c_g @ v_c)
    return y, eta1, eta2


def _estimate_derivative(d_c_s, d_c_g, d_g_s, stage, excited, batch, g,
                         anchor, fusion):
    y, eta1, eta2 = stage
    nu1 = y[:, 0] * batch
    nu2 = y[:, 1] * batch
    ddot_c_s = eta1 + np.where(excited, g.kappa1 * (nu1 - d_c_s), 0.0)
    ddot_g_s = np.where(excited, g.kappa3 * (batch - d_g_s), 0.0)
    if fusion == "anchor":
        if excited[anchor]:
            ddot_c_g = eta2 + g.kappa2 * (nu2[anchor] - d_c_g)
        else:
            ddot_c_g = eta2
    else:
        if excited.any():
            ddot_c_g = eta2 + g.kappa2 * (float(nu2[excited].mean()) - d_c_g)
        else:
            ddot_c_g = eta2
    return ddot_c_s, ddot_c_g, ddot_g_s


def ingest_measurement(st: ObserverState, m: Measurement, v_c: np.ndarray):
    """Fold a measurement into the windows and run the admission schedule.

    This is the bookkeeping half of observer_step; it returns the stage
    terms of the measurement so the integration half can reuse them.
    """
    t = m.t
    v_c = np.asarray(v_c, dtype=float)
    stage0 = _stage_terms(m, v_c)
    y0 = stage0[0]
    for i in range(st.feature_count):
        st.windows[i].push(t, m.u_c_s[i], m.u_c_g, v_c, y0[i])

    snap = 1e-9
    for i in range(st.feature_count):
        if t + snap >= st.next_admit_t[i]:
            try:
                dy, du = window_pair(st.windows[i], t)
            except InsufficientBuffer:
                continue  # retry next step, keep the slot scheduled
            st.stacks[i] = stack_update(st.stacks[i], dy, du, t)
            while st.next_admit_t[i] <= t + snap:
                st.next_admit_t[i] += st.admission_interval
    return stage0


def observer_step(st: ObserverState, m: Measurement, v_c: np.ndarray,
                  g: ObserverGains, dt: float,
                  m_mid: Measurement | None = None,
                  m_end: Measurement | None = None) -> ObserverState:
    """Advance all estimates one step: push the measurement into the windows,
    run the admission schedule, then RK4-integrate the update laws.

    When m_mid / m_end are given they supply the RK4 stage measurements at
    t + dt/2 and t + dt; otherwise the start measurement is held constant
    over the step.  Supplying stage measurements lets the pre-excitation
    open-loop branch track the true distances to integrator precision.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    v_c = np.asarray(v_c, dtype=float)

    stage0 = ingest_measurement(st, m, v_c)

    excited = np.array([s.excited for s in st.stacks])
    batch = np.array([s.sigma_u / s.sigma_y if s.excited else 0.0
                      for s in st.stacks])

    stage_mid = _stage_terms(m_mid, v_c) if m_mid is not None else stage0
    stage_end = _stage_terms(m_end, v_c) if m_end is not None else stage0

    def deriv(d_c_s, d_c_g, d_g_s, stage):
        return _estimate_derivative(d_c_s, d_c_g, d_g_s, stage, excited,
                                    batch, g, st.anchor, st.fusion)

    a = (st.d_hat_c_s, st.d_hat_c_g, st.d_hat_g_s)
    k1 = deriv(*a, stage0)
    k2 = deriv(a[0] + 0.5 * dt * k1[0], a[1] + 0.5 * dt * k1[1],
               a[2] + 0.5 * dt * k1[2], stage_mid)
    k3 = deriv(a[0] + 0.5 * dt * k2[0], a[1] + 0.5 * dt * k2[1],
               a[2] + 0.5 * dt * k2[2], stage_mid)
    k4 = deriv(a[0] + dt * k3[0], a[1] + dt * k3[1],
               a[2] + dt * k3[2], stage_end)

    w = dt / 6.0
    st.d_hat_c_s = a[0] + w * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
    st.d_hat_c_g = a[1] + w * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
    st.d_hat_g_s = a[2] + w * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
    return st

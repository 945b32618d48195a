"""Bearing-only distance estimation for a monocular camera with an
observability-aware optimal velocity planner, plus a deterministic
closed-loop simulation harness."""

from .config import ParseError, ScenarioConfig, ValidationError, default_config, load_config
from .geometry import (
    DegenerateGeometry,
    NotSPD,
    condition_number,
    integrate_quaternion,
    plane_normal,
    quat_rate_matrix,
    rotation_from_quaternion,
    spd_sqrt,
)
from .harness import RunLog, SimulationAbort, SweepResult, run, sweep_gamma
from .observer import (
    DegenerateBearing,
    HistoryStack,
    InsufficientBuffer,
    IntegralWindow,
    NotYetExcited,
    ObserverGains,
    ObserverState,
    batch_solve,
    make_observer_state,
    observer_step,
    regressor,
    stack_update,
    window_pair,
)
from .planner import (
    PlannerDiagnostics,
    PlannerGains,
    build_gains,
    control_velocity,
    diagnostics,
    goal_estimate,
    running_cost,
    world_velocity,
)
from .report import emit_artifacts
from .scene import (
    CameraIntrinsics,
    CameraState,
    FeatureLost,
    FeatureSet,
    Measurement,
    NoiseModel,
    fov_predicate,
    make_camera_state,
    step_dynamics,
    synthesize_measurement,
    true_distances,
)

__version__ = "0.1.0"

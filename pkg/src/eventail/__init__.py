"""Angular and linear velocity of an event camera from events of 3D lines."""
from .errors import EventailError
from .geometry import (
    Event,
    EventCluster,
    LineFrame,
    MotionState,
    NormalFlowSample,
    PluckerLine,
    bearing_from_event,
    build_incidence,
    compress_moments,
    gram_M,
    gram_N,
    line_frame,
    plane_normal,
    rotation_exact,
    rotation_first_order,
    unrotate_bearing,
)
from .eigen import eigen_smallest
from .rotation import (
    AdamConfig,
    Objective,
    ObjectiveSpec,
    SolveReport,
    adam_solve,
    cascade_solve,
    grad_closed,
    grad_fdm,
    objective_coplanarity,
    objective_incidence,
    objective_pure_rotation,
)
from .translation import (
    LinearVelocity,
    PartialVelocity,
    PureRotationVerdict,
    coplanarity_translation,
    detect_pure_rotation,
    incidence_translation,
    line_direction,
    solve_full,
    velocity_average,
)
from .simulator import SimConfig, Scene, sample_scene, synthesize_events, add_noise, inject_outliers
from .harness import (
    BenchmarkSummary,
    RansacConfig,
    TrialResult,
    landscape_grid,
    metric_ang,
    metric_lin,
    ransac_solve,
    run_benchmark,
    run_sweep,
    success_rate,
)

__version__ = "0.1.0"

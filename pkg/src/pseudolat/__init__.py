"""Single-moving-anchor localization toolkit.

Simulates a UAV anchor ranging ground targets along circular or straight
paths, estimates target positions with damped Gauss-Newton solvers, bounds
the achievable accuracy with the Cramér-Rao bound, and compares OFDM and
OTFS pilots for waveform-level time-of-arrival ranging.
"""

from ._kernels import backend
from .geometry import (
    CircularTrajectory,
    LinearTrajectory,
    Position3,
    TrajectorySpec,
    WaypointSeries,
    distance,
    linear_mirror,
    mirror_point,
    revolution_period,
    sample_trajectory,
)
from .localization import (
    AnchorRange,
    CrlbResult,
    GeometryError,
    Solution,
    SolveOptions,
    crlb,
    multilaterate,
    pseudo_multilaterate_moving,
    pseudo_multilaterate_static,
    residual_sum,
)
from .ranging import (
    MeasurementMatrix,
    NoiseModel,
    Obstacle,
    RangeMeasurement,
    build_measurement_matrix,
    collect_measurements,
    export_dataset,
    load_dataset,
    los_blocked,
    sample_range,
)
from .relocation import RelocationPolicy, predict_target, relocate
from .waveform import (
    C_LIGHT,
    DetectionFailure,
    NlosEnsemble,
    Path,
    PathSet,
    ToaEstimate,
    WaveformConfig,
    apply_channel,
    estimate_toa,
    isfft,
    make_pilot,
    ranging_error_trial,
    sfft,
    toa_to_distance,
)

__version__ = "0.1.0"

"""Extended-target Poisson multi-Bernoulli filtering with Gaussian-process
star-convex shapes, gamma measurement rates and multi-sensor posterior fusion."""

from .assignment import InfeasibleAssignmentError, solve
from .densities import (
    BernoulliComponent,
    EtState,
    GammaDensity,
    GaussianDensity,
    PmbDensity,
    PoissonIntensity,
    PppComponent,
    SingularCovarianceError,
)
from .experiment import (
    ConfigError,
    ScenarioConfig,
    bundled_scenario,
    emit_csv,
    emit_truth_csv,
    load_config,
    run_experiment,
)
from .filter import EtPmbFilter, FilterModel
from .fusion import FusionConfig, fuse_pmbs, fuse_pmbs_per_sensor, partition_fov
from .gp_extent import GpHyperParams, MotionParams, SensorPose, ekf_predict, ekf_update
from .metrics import GospaParams, gospa, iou
from .sim import SensorModel, TruthTarget, scan

__version__ = "0.1.0"

__all__ = [
    "BernoulliComponent", "ConfigError", "EtPmbFilter", "EtState", "FilterModel", "FusionConfig",
    "GammaDensity", "GaussianDensity", "GospaParams", "GpHyperParams", "InfeasibleAssignmentError",
    "MotionParams", "PmbDensity", "PoissonIntensity", "PppComponent", "ScenarioConfig", "SensorModel",
    "SensorPose", "SingularCovarianceError", "TruthTarget", "bundled_scenario", "ekf_predict", "ekf_update",
    "emit_csv", "emit_truth_csv", "fuse_pmbs", "fuse_pmbs_per_sensor", "gospa", "iou", "load_config",
    "partition_fov", "run_experiment", "scan", "solve",
]

"""Online multicalibration with an adaptively refined dyadic prediction grid."""
from .bins import DynamicBinTree, FixedGrid, Interval, log_factor, max_depth
from .environments import Environment, EnvironmentSpec, c_stat
from .experts import CalibrationWrapper, SleepingExperts, potential, raw_weight
from .groups import GroupFamily, family_from_name, verify_threshold_representation
from .harness import SweepSpec, fit_scaling, run_sweep
from .learner import RunConfig, Transcript, run
from .metrics import bias_audit, calerr, check_invariants, mcerr
from .solver import Forecast, InfeasibleForecastError, sample_prediction, solve_forecast

__version__ = "0.1.0"

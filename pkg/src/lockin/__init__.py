"""Lock-in domain estimation for a PLL driven by a linear current controller."""

from .domain import DomainEstimate, contains, solve_phi, trivial_estimate
from .estimator import LockInEstimator
from .exceptions import LockInError
from .family import CycleFamily, LimitCycle, continue_family, find_limit_cycle, query_vpll
from .gauge import Gauge, build_gauge, v_cc
from .growth import GrowthBound, eval_F, tabulate
from .model import (CascadeModel, InverterModel, InverterParams, SinusoidalModel, default_inverter_model,
                    eval_f)
from .sim import monte_carlo_validate, simulate

__version__ = "0.1.0"

__all__ = [
    "CascadeModel", "CycleFamily", "DomainEstimate", "Gauge", "GrowthBound", "InverterModel",
    "InverterParams", "LimitCycle", "LockInError", "LockInEstimator", "SinusoidalModel", "build_gauge",
    "contains", "continue_family", "default_inverter_model", "eval_F", "eval_f", "find_limit_cycle",
    "monte_carlo_validate", "query_vpll", "simulate", "solve_phi", "tabulate", "trivial_estimate", "v_cc",
]

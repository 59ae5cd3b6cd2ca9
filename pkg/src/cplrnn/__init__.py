"""Continuous-time piecewise-linear RNNs with analytic, event-driven trajectories."""

__version__ = "0.1.0"

from .errors import CPLRNNError  # noqa: E402
from .model import ModelParams, init_params, region_of, region_solution, eval_point  # noqa: E402
from .events import solve_trajectory, first_root  # noqa: E402

__all__ = ["CPLRNNError", "ModelParams", "init_params", "region_of", "region_solution",
           "eval_point", "solve_trajectory", "first_root", "__version__"]

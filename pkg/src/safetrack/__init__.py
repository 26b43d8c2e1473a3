"""Precomputed tracking-error bounds for planning with a simplified model.

A reachability game between a tracking model and a planning model yields a value
function whose sublevel sets bound the tracking error. Online, sensed obstacles are
grown by those bounds before planning, and a hybrid controller keeps the tracking
system inside them.
"""
from .errors import SafetrackError
from .grid import Grid, GridFunction
from .hjsolver import SolverConfig, ValueFunction, solve_decomposed, solve_hjvi
from .relsys import BoxSet, make_model, model_names
from .teb import TEBExtents, TEBQuery, TrackingBound

__version__ = "0.1.0"

__all__ = [
    "BoxSet", "Grid", "GridFunction", "SafetrackError", "SolverConfig", "TEBExtents",
    "TEBQuery", "TrackingBound", "ValueFunction", "make_model", "model_names",
    "solve_decomposed", "solve_hjvi", "__version__",
]

"""Preconditioned hidden gradient descent for games played through representation maps."""
from .kernels import BACKEND
from .dynamics import StepSchedule, NoiseModel, run, phgf_integrate
from .games import make_game
from .repmaps import sample_map, sample_product

__version__ = "0.1.0"

__all__ = ["BACKEND", "StepSchedule", "NoiseModel", "run", "phgf_integrate", "make_game",
           "sample_map", "sample_product", "__version__"]

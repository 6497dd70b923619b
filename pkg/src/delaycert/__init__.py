"""Robust stability certificates for linear point-delay systems with LFR uncertainty.

The package assembles Lyapunov-Krasovskii vertex LMIs (delay-independent and
delay-dependent), searches for feasible decision variables, and cross-checks
verdicts against time-domain simulation and characteristic roots.
"""

__version__ = "0.1.0"

from .errors import (DelayCertError, DimensionError, HypothesisError, MarginUndefinedError,
                     ModelFormatError, NumericalError, SizeGuardError, WellPosednessError)
from .model import DelayedLfrModel, DeltaMatrix, LfrBlock, SharedLoopLfr, eval_model, validate_model
from .polytope import UncertaintyPolytope

__all__ = [
    "DelayCertError", "DimensionError", "HypothesisError", "MarginUndefinedError",
    "ModelFormatError", "NumericalError", "SizeGuardError", "WellPosednessError",
    "DelayedLfrModel", "DeltaMatrix", "LfrBlock", "SharedLoopLfr", "UncertaintyPolytope",
    "eval_model", "validate_model", "__version__",
]

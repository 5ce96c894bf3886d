"""Numerical laboratory for boundary nucleation in a two-well elastic model."""

from .core import (CanonicalProblem, PhysicalProblem, RankOneTensor, Regime, RegimeTag,
                   canonicalize, classify_regime, predicted_exponent)
from .kernels import BACKEND

__all__ = ["BACKEND", "CanonicalProblem", "PhysicalProblem", "RankOneTensor", "Regime",
           "RegimeTag", "canonicalize", "classify_regime", "predicted_exponent"]

__version__ = "0.1.0"

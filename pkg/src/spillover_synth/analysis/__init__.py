"""
spillover-synth - Analysis Module

Donor matching, the weight solver, penalty selection, effect estimation and
placebo inference.
"""

from .effects import estimate_effects
from .matching import build_match_sets
from .penalty import select_penalties
from .placebo import run_placebos
from .solver import solve_penalized_sc

__all__ = [
    "build_match_sets", "solve_penalized_sc", "select_penalties",
    "estimate_effects", "run_placebos",
]

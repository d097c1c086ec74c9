"""
spillover-synth

Penalized synthetic-control estimation of direct, spillover and unrealized
spillover effects in clustered panels, with placebo inference.
"""

__version__ = "1.0.0"
__description__ = "Penalized synthetic control under partial interference"

__all__ = ["__version__"]

"""
spillover-synth - Core Module

Panel model, ingestion, configuration, simulation and the run pipeline.
"""

from .errors import SpilloverSynthError
from .panel import PanelDataset, SynthesisMode

__all__ = ["SpilloverSynthError", "PanelDataset", "SynthesisMode"]

#!/usr/bin/env python3
"""
Base Export Classes

Provides the base interface and common functionality for all export formats.
"""

from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, Optional

import pandas as pd

from ..core.errors import SpilloverSynthError


class ExportError(SpilloverSynthError):
    """Exception raised during export operations."""


class ExportData:
    """Container for data to be exported: one table and/or a metadata mapping."""

    def __init__(self, table: Optional[pd.DataFrame] = None,
                 metadata: Optional[Dict[str, Any]] = None):
        self.table = table
        self.metadata: Dict[str, Any] = dict(metadata or {})


class BaseExporter(ABC):
    """Base class for all exporters."""

    @abstractmethod
    def export(self, data: ExportData, output_path: Path, **kwargs) -> Path:
        """Export data to the specified path."""

    @property
    @abstractmethod
    def format_name(self) -> str:
        """Get the human-readable format name."""

    def _validate_output_path(self, output_path: Path) -> None:
        """Validate and create output directory if needed."""
        if output_path.is_dir():
            raise ExportError(f"Output path is a directory: {output_path}")

        output_path.parent.mkdir(parents=True, exist_ok=True)

        if output_path.exists() and not output_path.is_file():
            raise ExportError(f"Output path exists but is not a file: {output_path}")

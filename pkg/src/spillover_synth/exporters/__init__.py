#!/usr/bin/env python3
"""
Export System for spillover-synth

Writes result tables as CSV and the run manifest as JSON.
"""

from .base import BaseExporter, ExportData, ExportError
from .csv_exporter import CSVExporter
from .json_exporter import JSONExporter

# Export format registry
EXPORTERS = {
    "csv": CSVExporter,
    "json": JSONExporter,
}


def get_exporter(format_name: str) -> BaseExporter:
    """Get an exporter instance for the specified format."""
    format_name = format_name.lower()
    if format_name not in EXPORTERS:
        available = ", ".join(sorted(EXPORTERS.keys()))
        raise ExportError(f"Unsupported export format: {format_name}. Available formats: {available}")

    return EXPORTERS[format_name]()


def get_available_formats() -> list:
    """Get list of available export formats."""
    return sorted(EXPORTERS.keys())


__all__ = [
    "BaseExporter", "ExportError", "ExportData",
    "CSVExporter", "JSONExporter",
    "get_exporter", "get_available_formats",
]

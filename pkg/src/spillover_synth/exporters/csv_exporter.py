#!/usr/bin/env python3
"""
CSV Exporter

Writes result tables to CSV with six significant digits and ``-`` for cells
that do not apply, so the files open cleanly in spreadsheet applications.
"""

from pathlib import Path

from .base import BaseExporter, ExportData, ExportError

RESULT_FLOAT_FORMAT = "%.6g"
MISSING_MARK = "-"


class CSVExporter(BaseExporter):
    """Exports one table to CSV format."""

    @property
    def format_name(self) -> str:
        return "CSV"

    def export(self, data: ExportData, output_path: Path, **kwargs) -> Path:
        """Export the table; ``index`` keeps the frame's index as leading columns."""
        output_path = Path(output_path)
        self._validate_output_path(output_path)
        if data.table is None:
            raise ExportError(f"Nothing to write to {output_path}")

        float_format = kwargs.get("float_format", RESULT_FLOAT_FORMAT)
        na_rep = kwargs.get("na_rep", MISSING_MARK)
        index = kwargs.get("index", True)

        try:
            data.table.to_csv(
                output_path,
                index=index,
                float_format=float_format,
                na_rep=na_rep,
                lineterminator="\n",
            )
        except (OSError, ValueError) as e:
            raise ExportError(f"Failed to write {self.format_name} file {output_path}: {e}") from e
        return output_path


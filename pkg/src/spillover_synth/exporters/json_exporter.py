#!/usr/bin/env python3
"""
JSON Exporter

Writes the run manifest: a configuration echo, package versions and the seed.
Keys are sorted and no timestamps are recorded, so identical runs produce
identical files.
"""

import json
from pathlib import Path

from .base import BaseExporter, ExportData, ExportError


class JSONExporter(BaseExporter):
    """Exports metadata to JSON format."""

    @property
    def format_name(self) -> str:
        return "JSON"

    def export(self, data: ExportData, output_path: Path, **kwargs) -> Path:
        """Export data to JSON file."""
        output_path = Path(output_path)
        self._validate_output_path(output_path)
        pretty_print = kwargs.get("pretty_print", True)

        try:
            with open(output_path, "w", encoding="utf-8", newline="\n") as f:
                json.dump(
                    data.metadata,
                    f,
                    indent=2 if pretty_print else None,
                    sort_keys=True,
                    ensure_ascii=False,
                    default=str,
                )
                f.write("\n")
        except (OSError, TypeError, ValueError) as e:
            raise ExportError(f"Failed to write {self.format_name} file {output_path}: {e}") from e
        return output_path

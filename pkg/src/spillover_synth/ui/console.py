#!/usr/bin/env python3
"""
Rich Console UI Module

Terminal output for the command line: status messages, spinners and tables.
"""

from contextlib import contextmanager
from typing import Any, Dict, Optional

from rich.console import Console
from rich.table import Table


class ConsoleUI:
    """Console interface with Rich formatting."""

    def __init__(self, quiet: bool = False, no_color: bool = False,
                 console: Optional[Console] = None):
        self.console = console or Console(
            quiet=quiet,
            no_color=no_color,
            highlight=False,
        )
        self.quiet = quiet
        self._step_counter = 0

    def print(self, *args, **kwargs) -> None:
        """Print with Rich formatting."""
        self.console.print(*args, **kwargs)

    def step(self, message: str) -> None:
        """Print a numbered step line."""
        self._step_counter += 1
        self.print(f"[bold blue]Step {self._step_counter}:[/bold blue] {message}")

    def success(self, message: str) -> None:
        self.print(f"[bold green]✅ {message}[/bold green]")

    def error(self, message: str) -> None:
        """Errors are shown even in quiet mode."""
        Console(stderr=True, highlight=False).print(f"[bold red]❌ {message}[/bold red]")

    def warning(self, message: str) -> None:
        self.print(f"[bold yellow]⚠️  {message}[/bold yellow]")

    def info(self, message: str) -> None:
        self.print(f"[blue]ℹ️  {message}[/blue]")

    @contextmanager
    def status(self, message: str):
        """Show a status spinner."""
        if self.quiet or not self.console.is_terminal:
            yield
        else:
            with self.console.status(f"[bold blue]{message}[/bold blue]", spinner="dots"):
                yield

    def display_mapping(self, title: str, values: Dict[str, Any]) -> None:
        """Two-column key/value table."""
        table = Table(title=title)
        table.add_column("Setting", style="cyan", no_wrap=True)
        table.add_column("Value", style="white")
        for key, value in values.items():
            table.add_row(str(key), str(value))
        self.print(table)

#!/usr/bin/env python3
"""
Panel Ingestion

Reads and writes the long-format panel file
``unit_id,cluster_id,time,variable,value`` with row-numbered validation.
Row numbers in messages are file line numbers (header is line 1).
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..utils.logger import get_logger
from .errors import IngestError, PanelError
from .panel import PanelDataset, UnitRecord

logger = get_logger(__name__)

PANEL_COLUMNS = ["unit_id", "cluster_id", "time", "variable", "value"]


@dataclass
class IngestReport:
    """Counts gathered while reading a panel file."""
    rows: int = 0
    rows_by_variable: Dict[str, int] = field(default_factory=dict)
    ignored_variables: List[str] = field(default_factory=list)
    units: int = 0
    clusters: int = 0
    periods: int = 0


def canonical_units(units: Iterable[UnitRecord], treated_unit: str) -> Tuple[UnitRecord, ...]:
    """Treated unit, its cluster-mates, then the other clusters, all sorted by id."""
    units = list(units)
    treated_cluster = next((u.cluster_id for u in units if u.unit_id == treated_unit), None)

    def key(u: UnitRecord):
        return (
            u.cluster_id != treated_cluster,
            u.unit_id != treated_unit,
            u.cluster_id,
            u.unit_id,
        )

    return tuple(sorted(units, key=key))


def _line(index: int) -> int:
    return int(index) + 2


def _read_frame(path: Path) -> pd.DataFrame:
    try:
        frame = pd.read_csv(
            path,
            dtype={"unit_id": str, "cluster_id": str, "variable": str},
            keep_default_na=False,
            na_values={"value": ["", "NA", "NaN", "nan"], "time": [""]},
            skipinitialspace=True,
            float_precision="round_trip",
        )
    except FileNotFoundError:
        raise IngestError(f"panel file not found: {path}") from None
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise IngestError(f"cannot parse panel file {path}: {e}") from e

    missing = [c for c in PANEL_COLUMNS if c not in frame.columns]
    if missing:
        raise IngestError(f"panel file {path} is missing columns: {', '.join(missing)}")
    if frame.empty:
        raise IngestError(f"panel file {path} has no data rows")
    return frame[PANEL_COLUMNS]


def _coerce(frame: pd.DataFrame) -> pd.DataFrame:
    for column in ("unit_id", "cluster_id", "variable"):
        blank = frame[column].str.strip() == ""
        if blank.any():
            raise IngestError(f"row {_line(blank.idxmax())}: empty {column}")
        frame[column] = frame[column].str.strip()

    times = pd.to_numeric(frame["time"], errors="coerce")
    bad = times.isna() | (times != np.floor(times))
    if bad.any():
        row = bad.idxmax()
        raise IngestError(f"row {_line(row)}: time {frame.at[row, 'time']!r} is not an integer")
    frame["time"] = times.astype(int)

    values = pd.to_numeric(frame["value"], errors="coerce")
    bad = values.isna() | ~np.isfinite(values)
    if bad.any():
        row = bad.idxmax()
        raise IngestError(f"row {_line(row)}: value {frame.at[row, 'value']!r} is not a finite number")
    frame["value"] = values.astype(float)
    return frame


def _check_keys(frame: pd.DataFrame) -> None:
    duplicated = frame.duplicated(subset=["unit_id", "variable", "time"], keep="first")
    if duplicated.any():
        row = duplicated.idxmax()
        first = frame.index[
            (frame["unit_id"] == frame.at[row, "unit_id"])
            & (frame["variable"] == frame.at[row, "variable"])
            & (frame["time"] == frame.at[row, "time"])
        ][0]
        raise IngestError(
            f"row {_line(row)}: duplicate key (unit_id={frame.at[row, 'unit_id']}, "
            f"variable={frame.at[row, 'variable']}, time={frame.at[row, 'time']}) "
            f"first seen on row {_line(first)}"
        )

    clusters = frame.groupby("unit_id")["cluster_id"].nunique()
    moving = clusters[clusters > 1]
    if not moving.empty:
        unit = moving.index[0]
        rows = frame.index[frame["unit_id"] == unit]
        raise IngestError(
            f"unit {unit!r} is assigned to more than one cluster (rows "
            f"{_line(rows[0])}..{_line(rows[-1])})"
        )


def _check_balance(frame: pd.DataFrame, names: Sequence[str], times: Sequence[int],
                   units: Sequence[str], kind: str) -> None:
    expected = len(times)
    for name in names:
        rows = frame[(frame["variable"] == name) & (frame["time"].isin(times))]
        counts = rows.groupby("unit_id")["time"].nunique().reindex(units, fill_value=0)
        short = counts[counts < expected]
        if not short.empty:
            unit = short.index[0]
            have = set(rows.loc[rows["unit_id"] == unit, "time"])
            gaps = [t for t in times if t not in have]
            raise IngestError(
                f"unbalanced panel: {kind} {name!r} for unit {unit!r} is missing "
                f"period(s) {', '.join(str(t) for t in gaps[:5])}"
            )


def ingest_panel_with_report(path: Path, *, treated_unit: str, t0: int,
                             outcomes: Optional[Sequence[str]] = None,
                             covariates: Sequence[str] = ()) -> Tuple[PanelDataset, IngestReport]:
    """Parse and validate a long-format panel file.

    When ``outcomes`` is omitted every variable not listed as a covariate is
    treated as an outcome.
    """
    path = Path(path)
    frame = _coerce(_read_frame(path))
    _check_keys(frame)

    present = list(dict.fromkeys(frame["variable"]))
    covariates = list(covariates)
    outcomes = list(outcomes) if outcomes else [v for v in present if v not in covariates]
    unknown = [v for v in outcomes + covariates if v not in present]
    if unknown:
        raise IngestError(f"variables not found in {path}: {', '.join(unknown)}")

    report = IngestReport(rows=len(frame))
    report.ignored_variables = [v for v in present if v not in outcomes + covariates]
    if report.ignored_variables:
        logger.info("Ignoring variables not named in the configuration: %s",
                    ", ".join(report.ignored_variables))

    variables = outcomes + covariates
    frame = frame[frame["variable"].isin(variables)]
    times = sorted(frame["time"].unique().tolist())
    if t0 not in times:
        raise IngestError(f"t0={t0} is not a period of the panel ({times[0]}..{times[-1]})")

    records = frame.drop_duplicates("unit_id")[["unit_id", "cluster_id"]]
    units = canonical_units(
        (UnitRecord(r.unit_id, r.cluster_id) for r in records.itertuples(index=False)),
        treated_unit,
    )
    unit_ids = [u.unit_id for u in units]
    if treated_unit not in unit_ids:
        raise IngestError(f"treated unit {treated_unit!r} does not appear in {path}")

    _check_balance(frame, outcomes, times, unit_ids, "outcome")
    _check_balance(frame, covariates, [t for t in times if t <= t0], unit_ids, "covariate")

    cube = (
        frame.set_index(["unit_id", "variable", "time"])["value"]
        .reindex(pd.MultiIndex.from_product([unit_ids, variables, times]))
        .to_numpy()
        .reshape(len(unit_ids), len(variables), len(times))
    )

    try:
        ds = PanelDataset(
            units=units,
            times=tuple(times),
            t0=t0,
            variables=tuple(variables),
            values=cube,
            treated_unit=treated_unit,
            outcomes=tuple(outcomes),
            covariates=tuple(covariates),
        )
        ds.validate_design()
    except PanelError as e:
        raise IngestError(str(e)) from e

    report.rows_by_variable = frame.groupby("variable").size().reindex(variables).astype(int).to_dict()
    report.units = len(units)
    report.clusters = len(ds.clusters)
    report.periods = len(times)
    logger.info(
        "Ingested %d rows: %d units in %d clusters over %d periods",
        report.rows, report.units, report.clusters, report.periods,
    )
    return ds, report


def ingest_panel(path: Path, *, treated_unit: str, t0: int,
                 outcomes: Optional[Sequence[str]] = None,
                 covariates: Sequence[str] = ()) -> PanelDataset:
    ds, _ = ingest_panel_with_report(
        path, treated_unit=treated_unit, t0=t0, outcomes=outcomes, covariates=covariates
    )
    return ds


def panel_frame(ds: PanelDataset) -> pd.DataFrame:
    """Long-format frame of every finite value in the panel."""
    records = []
    for u, unit in enumerate(ds.units):
        for v, name in enumerate(ds.variables):
            for k, t in enumerate(ds.times):
                value = ds.values[u, v, k]
                if np.isfinite(value):
                    records.append((unit.unit_id, unit.cluster_id, t, name, float(value)))
    return pd.DataFrame.from_records(records, columns=PANEL_COLUMNS)


def emit_panel(ds: PanelDataset, path: Path) -> Path:
    """Write the panel in long format at full round-trip precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    panel_frame(ds).to_csv(path, index=False, float_format="%.17g")
    return path

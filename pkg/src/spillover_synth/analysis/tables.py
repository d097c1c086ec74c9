"""
Result tables in publication layout.

All tables are numeric DataFrames; cells that do not apply (a donor outside a
target's pool, a fit context that cannot be formed) are NaN and are written
as ``-`` by the CSV exporter.
"""

from typing import Dict, Mapping, Sequence

import numpy as np
import pandas as pd

from ..core.panel import PanelDataset
from .effects import EffectEstimates, balance_table
from .penalty import PenaltyConfig

UNREALIZED_COLUMN = "unrealized"
RMSPE_CONTEXTS = ("treated", "neighbors", "unrealized")


def weights_table(ds: PanelDataset, estimates: EffectEstimates) -> pd.DataFrame:
    """Donor weights: one row per unit, one column per treated-cluster target
    plus the within-cluster fit of the treated unit."""
    columns = list(ds.treated_cluster_units) + [UNREALIZED_COLUMN]
    table = pd.DataFrame(np.nan, index=pd.Index(ds.unit_ids, name="unit"), columns=columns)
    for unit, cf in estimates.counterfactuals.items():
        for donor, weight in cf.weights_used.as_dict().items():
            table.at[donor, unit] = weight
    if estimates.xi is not None:
        for donor, weight in estimates.xi.weights_used.as_dict().items():
            table.at[donor, UNREALIZED_COLUMN] = weight
    return table


def stacked_weights_table(ds: PanelDataset,
                          estimates: Mapping[str, EffectEstimates]) -> pd.DataFrame:
    return pd.concat(
        {variable: weights_table(ds, est) for variable, est in estimates.items()},
        names=["variable"],
    )


def stacked_balance_table(ds: PanelDataset,
                          estimates: Mapping[str, EffectEstimates]) -> pd.DataFrame:
    frames = {
        variable: balance_table(ds, est.counterfactuals, est.xi, variable)
        for variable, est in estimates.items()
    }
    return pd.concat(frames, names=["variable"])


def penalties_table(penalties: Mapping[str, PenaltyConfig]) -> pd.DataFrame:
    rows = {
        variable: {
            "lambda_treated": p.lambda_treated,
            "lambda_neighbors": p.lambda_neighbors,
            "lambda_star": p.lambda_star,
        }
        for variable, p in penalties.items()
    }
    table = pd.DataFrame.from_dict(rows, orient="index")
    table.index.name = "variable"
    return table


def rmspe_table(units: Sequence[str], fits: Mapping[str, Mapping[str, Dict[str, float]]]) -> pd.DataFrame:
    """Pre-period RMSPE per unit with one column per (variable, fit context).

    ``fits`` maps variable -> unit -> context -> RMSPE.
    """
    data = {}
    for variable, per_unit in fits.items():
        for context in RMSPE_CONTEXTS:
            data[(variable, context)] = [
                per_unit.get(unit, {}).get(context, np.nan) for unit in units
            ]
    table = pd.DataFrame(data, index=pd.Index(list(units), name="unit"))
    table.columns = pd.MultiIndex.from_tuples(table.columns, names=["variable", "context"])
    return table


def flatten_columns(table: pd.DataFrame) -> pd.DataFrame:
    """Join MultiIndex columns as ``variable:context`` for flat CSV headers."""
    if isinstance(table.columns, pd.MultiIndex):
        table = table.copy()
        table.columns = [":".join(str(p) for p in c) for c in table.columns]
    return table

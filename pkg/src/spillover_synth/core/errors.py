"""Exception hierarchy shared by the estimation library and the CLI."""


class SpilloverSynthError(Exception):
    """Base class for all errors raised by spillover_synth."""


class PanelError(SpilloverSynthError):
    """Panel invariants violated or a panel value could not be resolved."""


class IngestError(PanelError):
    """The panel file could not be parsed into a valid dataset."""


class MatchingError(SpilloverSynthError):
    """Donor matching could not be carried out."""


class SolverError(SpilloverSynthError):
    """The simplex weight problem was ill-posed."""


class CrossValidationError(SpilloverSynthError):
    """Penalty selection failed."""


class EstimationError(SpilloverSynthError):
    """Effect estimation received inconsistent inputs."""


class PlaceboError(SpilloverSynthError):
    """Placebo inference could not produce a reference distribution."""

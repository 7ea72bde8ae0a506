"""Exception hierarchy shared by all modules."""


class PanelError(Exception):
    """Base class for errors raised by this package."""


class SchemaError(PanelError, KeyError):
    """A required column is absent."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class IntegrityError(PanelError):
    """Duplicate (entity, time) keys or otherwise malformed panel structure."""


class ImputationError(PanelError):
    """A column has no observed values to impute from."""


class NamingError(PanelError):
    """A derived column would overwrite an existing one."""


class MissingValuesError(PanelError):
    """An operation that needs complete data received missing cells."""


class ConfigurationError(PanelError, ValueError):
    """Invalid estimator or simulation settings."""


class FitError(PanelError):
    """Not enough data to fit a model."""


class DegenerateTreatmentError(PanelError):
    """Treatment residuals have zero variation."""


class CollinearityError(PanelError):
    """The regression design is rank deficient."""


class DataError(PanelError):
    """The estimation sample is empty or otherwise unusable."""

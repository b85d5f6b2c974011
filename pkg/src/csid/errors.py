"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to:
1 usage/config, 2 data, 3 numerical failure.
"""


class CsidError(Exception):
    exit_code = 1


class ConfigError(CsidError):
    exit_code = 1


class RegistryError(ConfigError):
    """Unknown color-space id."""


class DataError(CsidError):
    exit_code = 2


class DecodeError(DataError):
    pass


class UnsupportedFormatError(DataError):
    pass


class GeometryError(DataError):
    pass


class LabelingError(DataError):
    pass


class DatasetError(DataError):
    pass


class CoverageError(DataError):
    pass


class DegenerateClassError(DataError):
    pass


class StratificationError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class BundleMismatchError(DataError):
    pass


class NumericalError(CsidError):
    exit_code = 3


class SingularGeometryError(NumericalError):
    """Collinear primaries: no RGB->XYZ matrix exists."""


class SingularSystemError(NumericalError):
    pass


class FitFailure(NumericalError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class FeatureExtractionError(NumericalError):
    pass


class MetricError(NumericalError):
    pass

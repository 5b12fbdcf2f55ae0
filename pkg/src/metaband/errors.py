"""Exception hierarchy shared by all modules."""


class MetabandError(Exception):
    """Base class for every error raised by the package."""


class GeometryError(MetabandError, ValueError):
    """Invalid cell description."""


class InvalidShape(GeometryError):
    pass


class OverlapError(GeometryError):
    pass


class OutOfCellError(GeometryError):
    pass


class NumericalFailure(MetabandError):
    """Base class for failures of a numerical kernel."""


class MeshFailure(NumericalFailure):
    pass


class SingularSystem(NumericalFailure):
    def __init__(self, message, defect=None):
        super().__init__(message)
        self.defect = defect


class ConvergenceFailure(NumericalFailure):
    pass


class InsufficientSpectrum(NumericalFailure):
    pass


class CorrectorFailure(NumericalFailure):
    pass


class PoleProximity(NumericalFailure):
    def __init__(self, message, pole=None, distance=None):
        super().__init__(message)
        self.pole = pole
        self.distance = distance


class NoRootInInterval(NumericalFailure):
    pass


class BracketFailure(NumericalFailure):
    pass


class ModeNotFound(NumericalFailure):
    pass


class ModeAmbiguity(NumericalFailure):
    pass


class SeriesFailure(NumericalFailure):
    """Raised when an order of the power-series hierarchy cannot be built."""


class ConfigError(MetabandError):
    pass


class ParseError(ConfigError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class ValidationError(ConfigError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class CompatibilityFailure(SeriesFailure):
    """A Neumann-type right-hand side violates its solvability condition."""

    def __init__(self, message, residual=None, order=None):
        super().__init__(message)
        self.residual = residual
        self.order = order


class GammaCollision(SeriesFailure):
    """The solvability coefficient vanishes at the branch point."""


class SpectralMismatch(SeriesFailure):
    pass


class EmptyInterval(NumericalFailure):
    pass


class SignAmbiguity(NumericalFailure):
    pass

"""Exception hierarchy shared by the solver, analysis and CLI layers."""


class SwitchError(Exception):
    """Base class for every error raised by pcswitch."""


class ConfigError(SwitchError, ValueError):
    pass


class SolverError(SwitchError):
    pass


class NoConvergence(SolverError):
    """Damped Newton gave up; ``residual`` holds the last residual norm (A)."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class BranchAmbiguity(SolverError):
    pass


class AnalysisError(SwitchError):
    pass


class ZeroNormCurve(AnalysisError, ValueError):
    pass


class UnimodalHistogram(AnalysisError):
    pass


class FlatGrid(AnalysisError, ValueError):
    pass


class PeriodMismatch(AnalysisError, ValueError):
    pass


class AliasedSpectrum(AnalysisError, ValueError):
    pass


class IllConditioned(AnalysisError):
    pass


class EmptyBand(AnalysisError):
    pass


class NoCompressionInRange(SolverError):
    pass

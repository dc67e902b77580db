"""Exception and warning types shared across the package."""


class ZfpBiasError(Exception):
    """Base class for package errors."""


class ConfigError(ZfpBiasError, ValueError):
    pass


class NonFiniteInput(ZfpBiasError, ValueError):
    pass


class ZeroBlock(ZfpBiasError, ValueError):
    pass


class DegenerateField(ZfpBiasError, ValueError):
    pass


class ContainerError(ZfpBiasError, ValueError):
    pass


class BetaOutOfAnalysisRange(UserWarning):
    """The bias model's hypotheses do not hold at this precision."""

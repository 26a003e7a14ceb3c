"""Exception hierarchy shared across the package."""


class ComgenError(Exception):
    pass


class ConfigurationError(ComgenError, ValueError):
    """Invalid factor space, condition, model or experiment configuration."""


class SplitError(ComgenError):
    pass


class SamplerError(ComgenError):
    pass


class FidsError(ComgenError):
    pass


class FidsVersionError(FidsError):
    pass


class FidsHeaderError(FidsError):
    pass


class FidsPayloadError(FidsError):
    pass


class DivergenceError(ComgenError, FloatingPointError):
    pass


class MetricError(ComgenError, ValueError):
    pass

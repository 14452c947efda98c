"""Exception types shared across the package."""


class MicrotrafficError(Exception):
    """Base class for errors raised by this package."""


class InputDomainError(MicrotrafficError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class SingularGapError(InputDomainError):
    """A following gap is zero or negative where a positive gap is required."""


class DegenerateSeriesError(MicrotrafficError, ValueError):
    """A series has no variance, so the requested statistic is undefined."""


class ConfigurationError(MicrotrafficError):
    """Required configuration is missing or internally inconsistent."""


class SchemaError(MicrotrafficError, ValueError):
    """A file does not conform to its declared schema."""


class NetworkError(SchemaError):
    """A road-network definition is invalid (dangling refs, degenerate geometry)."""


class GenerationError(MicrotrafficError, RuntimeError):
    """Random generation could not satisfy its constraints."""


class EnvUsageError(MicrotrafficError, RuntimeError):
    """The environment API was called out of order."""


class PolicyProtocolError(MicrotrafficError, RuntimeError):
    """An external policy process broke the line protocol."""

"""
Error hierarchy shared by every module.

The CLI maps the three families to exit codes: ConfigError and InputError
to 2, NumericalError to 3.
"""


class StitchwiseError(Exception):
    """Base class for all library errors."""


class ConfigError(StitchwiseError):
    """Invalid settings, sizes or experiment configuration."""


class InputError(StitchwiseError):
    """Shape, label or contract violation in the data handed to an operation."""


class NumericalError(StitchwiseError):
    """A numerical degeneracy the computation cannot proceed through."""


# Configuration

class BadConfig(ConfigError):
    pass


class BadArchitecture(ConfigError):
    pass


class BadPeriod(ConfigError):
    pass


class NonMonotoneTable(ConfigError):
    pass


class SubBatchTooSmall(ConfigError):
    pass


class NotEnoughSamples(ConfigError):
    pass


class EmptyDataset(ConfigError):
    pass


class ModeMismatch(ConfigError):
    pass


class AnchorCountMismatch(ConfigError):
    pass


class NonPositiveEpsilon(ConfigError):
    pass


# Inputs

class DimensionMismatch(InputError):
    pass


class ArchitectureMismatch(InputError):
    pass


class CacheMismatch(InputError):
    pass


class LengthMismatch(InputError):
    pass


class LabelOutOfRange(InputError):
    pass


class TooFewPoints(InputError):
    pass


class ClassTooSmall(InputError):
    pass


# Numerics

class ZeroVector(NumericalError):
    pass


class DegenerateBatch(NumericalError):
    pass


class SingularSigmaIdentity(NumericalError):
    pass


class MembershipViolation(NumericalError):
    pass


class DegenerateEdge(NumericalError):
    pass

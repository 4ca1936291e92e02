"""Exception hierarchy for dogdlab."""


class DogdlabError(Exception):
    """Base class for all library errors."""


class RetryExhausted(DogdlabError):
    """Rejection sampling failed to produce a connected graph."""


class InvariantViolation(DogdlabError):
    """A constructed object broke one of its structural invariants."""


class NoConvergence(DogdlabError):
    """An iterative solver hit its iteration cap."""


class DimensionMismatch(DogdlabError, ValueError):
    pass


class ShapeMismatch(DogdlabError, ValueError):
    pass


class EmptyBatch(DogdlabError, ValueError):
    pass


class DomainViolation(DogdlabError, ValueError):
    """A point or parameter lies outside the admissible domain."""


class StepSizeNonPositive(DogdlabError, ValueError):
    pass


class InsufficientData(DogdlabError, ValueError):
    pass


class BadMagic(DogdlabError, ValueError):
    """IDX header magic number does not match the expected type."""


class TruncatedFile(DogdlabError, ValueError):
    """IDX payload shorter than the header promises."""


class IoError(DogdlabError, OSError):
    pass


class ConfigInvalid(DogdlabError, ValueError):
    """Experiment configuration rejected; ``field`` names the offending key."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")

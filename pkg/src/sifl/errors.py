"""Exception types shared across the package.

Every shape mismatch raises; nothing silently broadcasts. File-system
problems surface as the built-in OSError/IOError.
"""


class SiflError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(SiflError):
    """Array shape or size is inconsistent with the keys or model."""


class GenerationFailure(SiflError):
    """Key generation could not meet its constraints within the retry budget."""


class ShapeMismatch(SiflError):
    """Structured data (flattened params, messages, traces) has the wrong layout."""


class EmptyDataset(SiflError):
    """A local run or partition was given no samples."""


class EmptyBatch(SiflError):
    """Loss/gradient evaluation was given an empty minibatch."""


class ParseError(SiflError):
    """Malformed text input. Carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class TooManyClients(SiflError):
    """More clients requested than there are samples to partition."""


class InvalidArgs(SiflError):
    """Numeric argument outside its documented domain."""


class DomainError(SiflError):
    """Function argument outside the mathematical domain (e.g. Q-inverse input)."""


class NoSolution(SiflError):
    """Noise calibration has no solution for the given inputs."""


class KeyMismatch(SiflError):
    """Key dimensions do not match the model or each other."""


class KeyFormatError(SiflError):
    """Key file is corrupt, has a bad header, or fails revalidation on load."""


class ProtocolOrderError(SiflError):
    """A role received a message out of sequence for its round/mode."""


class MissingClient(SiflError):
    """Aggregation round is missing an update from a registered client."""


class DuplicateClient(SiflError):
    """Aggregation round received two updates from the same client."""


class ConfigError(SiflError):
    """Experiment configuration is inconsistent or incomplete."""

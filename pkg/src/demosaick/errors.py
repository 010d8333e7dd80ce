"""Error types shared across the package.

The CLI maps these onto exit codes, so the split matters: usage problems are
argparse's business, I/O problems raise OSError, everything that violates a
documented precondition or invariant lands on ContractError, and a non-finite
value anywhere in a forward/backward pass is its own category because training
aborts on it.
"""


class ContractError(ValueError):
    """A documented precondition or invariant was violated."""


class ConfigError(ContractError):
    """A configuration object or file failed validation."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf from finite inputs."""


class CheckpointError(ContractError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class CheckpointChecksumError(CheckpointError):
    """Checkpoint payload does not match its recorded checksum."""


class CheckpointConfigError(CheckpointError):
    """Checkpoint config conflicts with the config expected by the caller."""


class ImageFormatError(OSError):
    """An image file is malformed or uses an unsupported variant.

    Subclasses OSError on purpose: a corrupt file and a missing file are the
    same failure class to a caller (and to the CLI exit-code mapping).
    """

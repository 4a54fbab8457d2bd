"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ParameterError (bad configuration or
flag values) exits 2, everything else here exits 1.
"""


class CardfuseError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(CardfuseError, ValueError):
    """Invalid configuration value or out-of-range argument."""


class ShapeError(CardfuseError, ValueError):
    """Array dimensions do not match an operation's contract."""


class DataError(CardfuseError, ValueError):
    """Dataset content is invalid (non-finite values, bad labels)."""


class ManifestError(CardfuseError, ValueError):
    """Manifest file is malformed or inconsistent."""


class BlobSizeError(CardfuseError, ValueError):
    """Blob file size disagrees with the manifest."""


class NormalizationError(CardfuseError, ValueError):
    """A vector that must be normalized has zero norm."""


class TrainingError(CardfuseError, RuntimeError):
    """Training produced a non-finite value or cannot proceed."""


class MiningError(CardfuseError, RuntimeError):
    """Triplet mining cannot satisfy its contract for a batch."""


class ContractError(CardfuseError, RuntimeError):
    """A cached intermediate no longer matches the objects it came from."""

"""Exception hierarchy shared by every nlosltm module.

Each class carries an ``error_class`` tag; the CLI prints
``error: <error_class>: <message>`` on one line so callers can parse it.
"""

from __future__ import annotations

from typing import Optional


class NlosError(Exception):
    """Base class for all nlosltm errors."""

    error_class = "nlos_error"


class ConfigurationError(NlosError, ValueError):
    """Invalid configuration, geometry, or occluder."""

    error_class = "configuration_error"


class DimensionError(NlosError, ValueError):
    """Array or tensor shapes do not match what an operation expects."""

    error_class = "dimension_error"


class IllConditionedError(NlosError):
    """A linear system is singular (or numerically so) and no regularization was given."""

    error_class = "ill_conditioned"


class ContractError(NlosError):
    """An API precondition was violated by the caller."""

    error_class = "contract_error"


class EmptySplitError(NlosError):
    """A manifest split holds no records."""

    error_class = "empty_split"


class MissingTransportError(NlosError):
    """A transport matrix needed for a baseline is not in the cache."""

    error_class = "missing_transport"


class IntegrityError(NlosError):
    """A binary container is corrupt, tampered with, or of an unknown version."""

    error_class = "integrity_error"


class NumericError(NlosError):
    """Non-finite values appeared in a computation.

    Attributes:
        report: Per-term loss values at the failing step, if any.
        batch_index: Index of the offending batch within its epoch, if any.
    """

    error_class = "numeric_error"

    def __init__(self, message: str, *, report: Optional[dict] = None,
                 batch_index: Optional[int] = None):
        super().__init__(message)
        self.report = report
        self.batch_index = batch_index


class SourceImageError(NlosError):
    """One or more source images could not be read.

    Attributes:
        failures: ``(path, reason)`` pairs, one per unreadable file.
    """

    error_class = "source_image_error"

    def __init__(self, failures: list[tuple[str, str]]):
        self.failures = list(failures)
        listing = "; ".join(f"{path}: {reason}" for path, reason in self.failures)
        super().__init__(f"{len(self.failures)} unreadable source image(s): {listing}")

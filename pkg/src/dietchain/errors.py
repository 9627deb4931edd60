"""Exception types shared across the package."""

from __future__ import annotations


class DietchainError(Exception):
    """Base class for all package-specific errors."""


class DecodeError(DietchainError):
    """Raised when wire bytes cannot be decoded.

    Carries the byte offset at which decoding gave up, so malformed
    inputs can be pinpointed in traces and tests.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class IncompleteProofError(DietchainError):
    """A partial Merkle tree is missing a node needed to reach the root."""


class HistoryUnavailableError(DietchainError):
    """A shard-store query asked for a height outside the stored history."""


class InconsistentStateError(DietchainError):
    """A shard-store mutation contradicts its own invariants.

    Applying a block whose inputs are absent from the store is a caller
    bug: blocks must be validated before they are applied.
    """


class ValidationError(DietchainError):
    """A block, transaction, or proof failed a consensus check.

    ``code`` is a stable kebab-case identifier ('pow-failure',
    'missing-input', 'root-mismatch', ...) used in node verdicts,
    reports, and tests. ``height`` tags the offending block when known.
    """

    def __init__(self, code: str, detail: str = "", height: int | None = None):
        self.code = code
        self.detail = detail
        self.height = height
        where = f" at height {height}" if height is not None else ""
        super().__init__(f"{code}{where}" + (f": {detail}" if detail else ""))


class ScenarioError(DietchainError):
    """A scenario config is malformed or names resources that do not exist."""

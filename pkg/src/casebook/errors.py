"""Exception hierarchy shared across the package."""


class CasebookError(Exception):
    """Base class for all casebook errors."""


class IngestError(CasebookError):
    """Raised when an export dump cannot be parsed or violates invariants."""


class EmbeddingError(CasebookError):
    """Raised when a text cannot be embedded or a provider misbehaves."""


class RemoteError(CasebookError):
    """Raised when a remote provider keeps failing after bounded retries."""


class IndexError_(CasebookError):
    """Raised on vector-index build/search/add contract violations."""


class IndexFormatError(CasebookError):
    """Raised when a persisted index byte stream is corrupt or unreadable."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (offset {offset})"
        super().__init__(message)
        self.offset = offset


class StaleIndexError(CasebookError):
    """Raised when an index was built under a different embedder version."""


class GenerationError(CasebookError):
    """Raised when a suggestion cannot be produced."""


class SnapshotError(CasebookError):
    """Raised when a service snapshot is missing, truncated, or corrupt."""

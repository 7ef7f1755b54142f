"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A study config, transform mapping, or request violates its contract."""


class BuildError(ValueError):
    """Corpus or index construction failed (bad dimensions, empty corpus, ...)."""


class StudyError(RuntimeError):
    """A study failed at runtime (e.g. an objective with no admissible queries)."""


class GridExhausted(Exception):
    """Grid sampler has enumerated every combination."""


class OracleRefusal(RuntimeError):
    """Grid oracle refused to enumerate a combinatorial space above its cap."""


class MultiSearchError(RuntimeError):
    """A batched search failed; carries the batch position of the failing element."""

    def __init__(self, position: int, cause: Exception):
        super().__init__(f"search failed at batch position {position}: {cause}")
        self.position = position
        self.cause = cause

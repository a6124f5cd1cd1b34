"""Exception hierarchy shared across pipeline stages.

Exit-code mapping for the CLI: validation problems exit 1, I/O problems
exit 2 (plain OSError is mapped the same way), remote-annotator problems
exit 3.
"""


class PetcohortError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1


class ValidationError(PetcohortError):
    """Malformed or contract-violating input data."""

    exit_code = 1


class IngestError(ValidationError):
    """Strict-mode ingestion abort; carries the offending line number."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class AnnotationError(ValidationError):
    """Annotation record violates the annotation schema."""


class ConfigError(ValidationError):
    """Configuration value outside its documented range."""


class UndefinedHappinessError(PetcohortError):
    """Happiness index requested for a user with no face-bearing images."""


class DegenerateTableError(PetcohortError):
    """Contingency table has fewer than two usable columns."""


class AnnotatorError(PetcohortError):
    """Remote annotator could not supply any usable annotations."""

    exit_code = 3

"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad input to a public operation (precondition failure)."""


class DomainError(ArithmeticError):
    """A numerical operation left its domain, e.g. normalising a zero vector."""


class NumericError(ArithmeticError):
    """A function under evaluation produced a non-finite value."""


class ConstructionError(RuntimeError):
    """A model or fixture could not be built from the requested parameters."""


class ParseError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class RetriableError(RuntimeError):
    """A remote client kept failing after all retry attempts."""

    def __init__(self, message: str, attempts: int):
        self.attempts = attempts
        super().__init__(f"{message} (after {attempts} attempts)")


class AttackError(RuntimeError):
    """Raised when an attack step fails; carries the step index."""

    def __init__(self, message: str, step: int):
        self.step = step
        super().__init__(f"step {step}: {message}")


class ManifestError(ValidationError):
    """Manifest rejected; ``issues`` holds one message per problem found."""

    def __init__(self, issues: list[str]):
        self.issues = list(issues)
        super().__init__("manifest rejected:\n" + "\n".join(f"  - {i}" for i in self.issues))

"""Exception types shared across the package."""


class SchemaError(ValueError):
    """Raised when an input file does not match the expected schema."""


class EmptyTensorError(ValueError):
    """Raised when filtering or ingestion leaves no usable cells."""


class NumericError(RuntimeError):
    """Raised when an iterative numeric procedure fails (divergence,
    non-finite loss, solver non-convergence)."""

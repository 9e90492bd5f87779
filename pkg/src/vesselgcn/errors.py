class ValidationError(ValueError):
    """Input data or configuration violates a documented invariant."""


class ShapeError(ValueError):
    """Matrix shapes are inconsistent for the requested operation."""

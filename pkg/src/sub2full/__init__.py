"""Sub-band to full-spectrum self-supervised OCT despeckling on simulated data."""

__version__ = "0.1.0"


class ValidationError(ValueError):
    """Raised when a configuration or input violates a documented precondition."""

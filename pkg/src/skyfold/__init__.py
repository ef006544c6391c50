"""Sparse sketching and recovery for images of small, distinguishable objects.

The library builds binary sketching matrices from error-correcting codes
composed with an affine hash family, recovers object-bearing grid cells by
clustering bucket features and decoding the resulting codewords, and ships a
two-modulus folding pipeline for star-field attitude determination together
with a synthetic-sky experiment harness.
"""


class ConfigError(ValueError):
    """Invalid or infeasible configuration (CLI maps this to exit code 2)."""


class CapacityError(RuntimeError):
    """A sized container or parameter envelope was exceeded at runtime."""


from . import (  # noqa: E402
    codes,
    image_model,
    measurement,
    recovery,
    aduaf,
    startracker,
    io,
    config,
)

__all__ = [
    "ConfigError",
    "CapacityError",
    "codes",
    "image_model",
    "measurement",
    "recovery",
    "aduaf",
    "startracker",
    "io",
    "config",
    "plots",
    "cli",
]

__version__ = "0.1.0"

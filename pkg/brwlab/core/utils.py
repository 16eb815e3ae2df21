"""
Utility functions for the application.
"""
import math
from fractions import Fraction
from typing import Union

import numpy as np

# Stream tags for SeedSequence spawn keys.
STREAM_MAIN = 0
STREAM_RED = 1
STREAM_BLUE = 2
STREAM_LINEAGE = 3

Number = Union[float, Fraction]


def spawn_rng(seed: int, *keys: int) -> np.random.Generator:
    """
    Build an independent generator for a (seed, key...) stream.

    Args:
        seed: Run seed
        *keys: Spawn key, typically (replication, stream tag)

    Returns:
        PCG64-backed numpy Generator

    Examples:
        >>> a = spawn_rng(7, 0, STREAM_RED).integers(1 << 30)
        >>> b = spawn_rng(7, 0, STREAM_RED).integers(1 << 30)
        >>> a == b
        True
    """
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(seq))


def to_fraction(value: Union[int, float, str, Fraction]) -> Fraction:
    """
    Exact rational for a decimal literal.

    Floats go through their shortest repr so 0.7 becomes 7/10, not the binary
    expansion.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


def safe_log(value: Number) -> float:
    """Natural log with log(0) = -inf; exact for tiny Fractions."""
    if value == 0:
        return -math.inf
    if isinstance(value, Fraction):
        return math.log(value.numerator) - math.log(value.denominator)
    return math.log(value)


def format_float(value: float) -> str:
    """Round-trippable float text used in every CSV cell."""
    if value is None:
        return ""
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if math.isnan(value):
        return "nan"
    return format(float(value), ".17g")

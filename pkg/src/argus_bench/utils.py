import math

from .exceptions import ValidationError


def round_half_away(x):
    """Round to the nearest integer, ties away from zero (Python's round() ties to even)."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def as_triple(value, name, kind=int):
    try:
        out = tuple(kind(v) for v in value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a sequence of 3 numbers, got {value!r}") from None
    if len(out) != 3:
        raise ValidationError(f"{name} must have 3 components, got {len(out)}")
    return out

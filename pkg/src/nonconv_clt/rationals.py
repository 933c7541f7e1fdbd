"""Small helpers around exact rational arithmetic.

All model data (coefficients, probabilities, values) is held as
``fractions.Fraction``.  On the wire rationals travel as strings like
``"-3/4"`` or ``"5"``; floats are rejected wherever exactness matters.
"""

from __future__ import annotations

import math

from fractions import Fraction

from .errors import ConfigError


def parse_rational(text: object) -> Fraction:
    """Parse ``"p/q"`` (or ``"p"``) into a Fraction; ints are accepted too."""
    if isinstance(text, bool):
        raise ConfigError(f"expected rational string, got {text!r}")
    if isinstance(text, int):
        return Fraction(text)
    if isinstance(text, Fraction):
        return text
    if not isinstance(text, str):
        raise ConfigError(f"expected rational string, got {text!r} "
                          "(floats are not accepted in model definitions)")
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad rational literal {text!r}: {exc}") from None


def format_rational(value: Fraction) -> str:
    """Canonical wire form: ``"p/q"`` reduced, or ``"p"`` for integers."""
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def integer_nth_root(n: int, k: int) -> int:
    """Floor of the k-th root of a nonnegative integer, exactly."""
    if n < 0 or k < 1:
        raise ValueError("integer_nth_root needs n >= 0, k >= 1")
    if n in (0, 1) or k == 1:
        return n
    if k == 2:
        return math.isqrt(n)
    # Integer Newton started above the root (2**ceil(bits/k)) decreases
    # monotonically and stops exactly at the floor of the root.
    x = 1 << -(-n.bit_length() // k)
    while True:
        y = ((k - 1) * x + n // x ** (k - 1)) // k
        if y >= x:
            return x
        x = y


def exact_kth_root(value: Fraction, k: int) -> Fraction | None:
    """Return the rational k-th root of ``value`` if one exists, else None."""
    if value < 0:
        return None
    num = integer_nth_root(value.numerator, k)
    den = integer_nth_root(value.denominator, k)
    if num ** k == value.numerator and den ** k == value.denominator:
        return Fraction(num, den)
    return None


def root_approximation(value: Fraction, k: int, digits: int) -> Fraction:
    """Rational approximation of value**(1/k) good to ``digits`` decimals."""
    if value < 0:
        raise ValueError("roots of negative rationals are not supported")
    scale = 10 ** digits
    # floor(root * scale) = floor((value * scale^k) ** (1/k))
    scaled = integer_nth_root(value.numerator * scale ** k // value.denominator, k)
    return Fraction(scaled, scale)

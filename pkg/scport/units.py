"""
SI-suffixed number parsing and printing.

Every numeric value on the command line and in scenario files goes through
parse_si(), so "2mV", "40k", "10MHz", "1uF" and plain "1e-6" are all
accepted. format_si() is its inverse: parse_si(format_si(x)) == x exactly
for every finite float.

Prefixes shift the decimal exponent of the literal instead of multiplying,
so "10uF" parses to the same float as 10e-6.
"""

import math
import re
from decimal import Decimal

# Prefix -> power of ten. "u" and "µ" are both micro.
SI_PREFIXES: dict[str, int] = {
    "p": -12,
    "n": -9,
    "u": -6,
    "µ": -6,
    "m": -3,
    "k": 3,
    "M": 6,
    "G": 9,
}

# Prefixes tried by format_si, largest first
_FORMAT_ORDER = ("G", "M", "k", "", "m", "u", "n", "p")

KNOWN_UNITS = ("", "V", "A", "F", "Hz", "s", "W", "Ω", "ohm", "ohms", "bps", "bit/s")

_NUMBER_RE = re.compile(
    r"^\s*(?P<mantissa>[+-]?(?:\d+\.?\d*|\.\d+))(?:[eE](?P<exponent>[+-]?\d+))?"
    r"\s*(?P<rest>\S*)\s*$"
)


def parse_si(text: str, unit: str | None = None) -> float:
    """
    Parse a number with an optional SI prefix and unit.

    Args:
        text: Text such as "2mV", "10 MHz", "0.01", "1e-6F".
        unit: If given, the only unit accepted (besides none at all).

    Returns:
        The value in SI base units.

    Raises:
        ValueError: If the text is not a number or carries an unknown unit.
    """
    match = _NUMBER_RE.match(text)
    if match is None:
        raise ValueError(f"not a number: {text!r}")

    mantissa = match.group("mantissa")
    exponent = int(match.group("exponent") or 0)
    rest = match.group("rest")
    allowed = KNOWN_UNITS if unit is None else ("", unit)

    if rest in allowed:
        return float(f"{mantissa}e{exponent}")

    prefix, suffix = rest[0], rest[1:]
    if prefix in SI_PREFIXES and suffix in allowed:
        return float(f"{mantissa}e{exponent + SI_PREFIXES[prefix]}")

    raise ValueError(f"unknown unit or prefix in {text!r}")


def format_si(value: float, unit: str = "") -> str:
    """
    Format a value with the most readable SI prefix that still round-trips.

    Falls back to repr() when no prefixed form parses back to the exact
    same float.
    """
    if value == 0 or not math.isfinite(value):
        return f"{value!r}{unit}"

    exact = Decimal(repr(value))
    for prefix in _FORMAT_ORDER:
        mantissa = exact.scaleb(-SI_PREFIXES.get(prefix, 0))
        if not 1 <= abs(mantissa) < 1000:
            continue
        candidate = f"{format(mantissa.normalize(), 'f')}{prefix}{unit}"
        if parse_si(candidate, unit or None) == value:
            return candidate

    return f"{value!r}{unit}"


def parse_si_list(text: str, unit: str | None = None) -> list[float]:
    """Parse a comma-separated list, brackets optional: "[1u, 2u]" or "1u,2u"."""
    body = text.strip()
    if body.startswith("[") and body.endswith("]"):
        body = body[1:-1]
    items = [item.strip() for item in body.split(",") if item.strip()]
    return [parse_si(item, unit) for item in items]

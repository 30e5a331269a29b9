"""Unit-tagged frequency values.

Everything inside the package is an angular frequency (rad/s) or a rate in
s^-1.  Values coming from configuration files or the command line must
carry one of these tags:

``rad_per_s``
    already angular (also used for plain rates in s^-1)
``hz``
    cycles per second, multiplied by 2*pi
``two_pi_hz``
    a literal transcription of "2 pi x <value> Hz"; numerically the same as
    ``hz`` but kept so that quoted values can be copied verbatim
"""
from __future__ import annotations

import math
import re

UNIT_FACTORS = {
    "rad_per_s": 1.0,
    "hz": 2.0 * math.pi,
    "two_pi_hz": 2.0 * math.pi,
}

_TAGGED = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([a-z_]+)\s*$")


class UnitError(ValueError):
    """A frequency value without a valid unit tag."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def parse_tagged(value, path: str = "value") -> float:
    """Convert ``"1.72e9 two_pi_hz"`` (or a ``{value, unit}`` mapping) to rad/s."""
    if isinstance(value, dict):
        extra = set(value) - {"value", "unit"}
        if extra or "value" not in value or "unit" not in value:
            raise UnitError(path, "expected keys {value, unit}")
        number, unit = value["value"], value["unit"]
        if isinstance(number, bool) or not isinstance(number, (int, float)):
            raise UnitError(path, f"non-numeric value {number!r}")
        number = float(number)
    elif isinstance(value, str):
        match = _TAGGED.match(value)
        if match is None:
            raise UnitError(path, f"malformed tagged frequency {value!r}; expected '<number> <unit>' "
                                  f"with unit in {sorted(UNIT_FACTORS)}")
        number, unit = float(match.group(1)), match.group(2)
    else:
        raise UnitError(path, f"missing unit tag on {value!r}; expected '<number> <unit>'")
    if unit not in UNIT_FACTORS:
        raise UnitError(path, f"unknown unit tag {unit!r}; expected one of {sorted(UNIT_FACTORS)}")
    if not math.isfinite(number):
        raise UnitError(path, "value is not finite")
    return number * UNIT_FACTORS[unit]


def format_tagged(omega: float) -> str:
    """Canonical text form used when echoing resolved configs."""
    return f"{omega!r} rad_per_s"


def two_pi(f_hz: float) -> float:
    return 2.0 * math.pi * f_hz

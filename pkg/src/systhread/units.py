"""Unit table and exact-decimal quantities shared across the model.

All quantity arithmetic in constraint evaluation uses ``Decimal`` so that
reports are reproducible across platforms.  Geometry uses binary floats with
explicit tolerances and does not go through this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal, InvalidOperation


class UnitError(ValueError):
    """Unknown unit, unknown attribute, or incommensurable dimensions."""


# unit symbol -> (dimension, decimal factor to the dimension's base unit)
UNIT_TABLE: dict[str, tuple[str, Decimal]] = {
    "kg": ("mass", Decimal("1000")),
    "g": ("mass", Decimal("1")),
    "W": ("power", Decimal("1000")),
    "mW": ("power", Decimal("1")),
    "V": ("voltage", Decimal("1")),
    "mm": ("length", Decimal("1")),
    "m": ("length", Decimal("1000")),
    "s": ("time", Decimal("1")),
}

# base unit symbol per dimension, for display of computed values
BASE_UNITS: dict[str, str] = {
    "mass": "g",
    "power": "mW",
    "voltage": "V",
    "length": "mm",
    "time": "s",
}

# attribute name -> dimension; consulted when constraints are type-checked
# and when component attributes are set.  ``<name>_min`` / ``<name>_max``
# interval attributes share the stem's dimension.
ATTRIBUTE_DIMENSIONS: dict[str, str] = {
    "mass": "mass",
    "power": "power",
    "supply": "voltage",
    "demand": "voltage",
    "voltage": "voltage",
    "clearance": "length",
    "length": "length",
    "width": "length",
    "height": "length",
    "duration": "time",
}


def unit_dimension(unit: str) -> str:
    try:
        return UNIT_TABLE[unit][0]
    except KeyError:
        raise UnitError(f"unknown unit {unit!r}") from None


def attribute_dimension(name: str) -> str:
    """Dimension of a named attribute, honoring _min/_max interval suffixes."""
    stem = name
    for suffix in ("_min", "_max"):
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
            break
    try:
        return ATTRIBUTE_DIMENSIONS[stem]
    except KeyError:
        raise UnitError(f"unknown attribute {name!r}") from None


@dataclass(frozen=True)
class Quantity:
    """Exact decimal value with a unit from the project unit table."""

    value: Decimal
    unit: str

    def __post_init__(self) -> None:
        if self.unit not in UNIT_TABLE:
            raise UnitError(f"unknown unit {self.unit!r}")
        if not isinstance(self.value, Decimal):
            object.__setattr__(self, "value", Decimal(str(self.value)))

    @property
    def dimension(self) -> str:
        return UNIT_TABLE[self.unit][0]

    @property
    def base_value(self) -> Decimal:
        """Value converted to the dimension's base unit."""
        return self.value * UNIT_TABLE[self.unit][1]

    def in_unit(self, unit: str) -> Decimal:
        dim, factor = UNIT_TABLE.get(unit, (None, None))
        if dim != self.dimension:
            raise UnitError(f"cannot express {self.dimension} in {unit!r}")
        return self.base_value / factor

    def render(self) -> str:
        return f"{self.value} {self.unit}"

    @classmethod
    def parse(cls, text: str) -> Quantity:
        """Parse ``<decimal> <unit>``, e.g. ``4.0 kg``."""
        parts = text.split()
        if len(parts) != 2:
            raise UnitError(f"cannot parse quantity {text!r}")
        try:
            value = Decimal(parts[0])
        except InvalidOperation:
            raise UnitError(f"bad decimal in quantity {text!r}") from None
        return cls(value, parts[1])

"""Anthropometric profiles and segment coefficient tables.

A coefficient table maps each of the 19 canonical segments to fractions of
body height (segment length), body mass (segment mass), segment length
(CoM location along the segment axis) and segment length (radii of gyration).
Tables are pluggable by id; one default table ships with the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ValidationError

DEFAULT_TABLE_ID = "default-v1"

MASS_FRACTION_TOL = 1e-9


@dataclass(frozen=True)
class SegmentCoefficients:
    length_fraction: float
    mass_fraction: float
    com_fraction: float
    gyration_fractions: tuple[float, float, float]


@dataclass(frozen=True)
class CoefficientTable:
    table_id: str
    segments: dict[str, SegmentCoefficients]

    def __post_init__(self) -> None:
        total = sum(c.mass_fraction for c in self.segments.values())
        if abs(total - 1.0) > MASS_FRACTION_TOL:
            raise ValidationError(
                f"coefficient table {self.table_id!r}: mass fractions sum to "
                f"{total!r}, expected 1.0 within {MASS_FRACTION_TOL}"
            )
        for name, c in self.segments.items():
            if c.length_fraction <= 0.0 or c.mass_fraction <= 0.0:
                raise ValidationError(
                    f"coefficient table {self.table_id!r}: segment {name!r} has "
                    "non-positive length or mass fraction"
                )
            if not 0.0 <= c.com_fraction <= 1.0:
                raise ValidationError(
                    f"coefficient table {self.table_id!r}: segment {name!r} has "
                    "CoM fraction outside [0, 1]"
                )
            if len(c.gyration_fractions) != 3 or any(g < 0.0 for g in c.gyration_fractions):
                raise ValidationError(
                    f"coefficient table {self.table_id!r}: segment {name!r} has "
                    "invalid gyration fractions"
                )


@dataclass(frozen=True)
class AnthropometricProfile:
    """Subject height and mass plus the id of the coefficient table used
    to scale the model."""

    height_m: float
    mass_kg: float
    coefficient_table_id: str = DEFAULT_TABLE_ID

    def __post_init__(self) -> None:
        if self.height_m <= 0.0:
            raise ValidationError(f"height must be positive, got {self.height_m}")
        if self.mass_kg <= 0.0:
            raise ValidationError(f"mass must be positive, got {self.mass_kg}")


def parse_table(payload: dict) -> CoefficientTable:
    try:
        table_id = payload["table_id"]
        rows = payload["segments"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"coefficient table file missing field: {exc}") from exc
    segments = {}
    for row in rows:
        try:
            segments[row["name"]] = SegmentCoefficients(
                length_fraction=float(row["length_fraction"]),
                mass_fraction=float(row["mass_fraction"]),
                com_fraction=float(row["com_fraction"]),
                gyration_fractions=tuple(float(g) for g in row["gyration_fractions"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed coefficient row {row!r}: {exc}") from exc
    return CoefficientTable(table_id=table_id, segments=segments)


def load_table_file(path: str | Path) -> CoefficientTable:
    from .io import load_json_file  # local import: io depends on this module

    return parse_table(load_json_file(path))


def _load_default() -> CoefficientTable:
    text = resources.files("exoload.data").joinpath("coefficients_default.json").read_text("utf-8")
    return parse_table(json.loads(text))


_REGISTRY: dict[str, CoefficientTable] = {}


def register_table(table: CoefficientTable) -> None:
    _REGISTRY[table.table_id] = table


def get_table(table_id: str) -> CoefficientTable:
    if not _REGISTRY:
        register_table(_load_default())
    try:
        return _REGISTRY[table_id]
    except KeyError:
        raise ValidationError(
            f"unknown coefficient table {table_id!r}; registered: {sorted(_REGISTRY)}"
        ) from None

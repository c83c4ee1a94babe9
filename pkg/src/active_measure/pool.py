"""Unit pools: the finite labelable domain, labels, and optional ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import DuplicateUnitError, ModeError, PoolFormatError


@dataclass(frozen=True)
class Unit:
    """One labelable unit. ``payload_ref`` is opaque to the engine."""

    id: str
    payload_ref: str
    true_value: float | None = None

    def __post_init__(self):
        if self.true_value is not None:
            v = float(self.true_value)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"unit {self.id!r}: true value must be finite and >= 0, got {v}")
            object.__setattr__(self, "true_value", v)


class UnitPool:
    """Ordered collection of units; all carry ground truth (simulation) or none do (live)."""

    def __init__(self, units: Iterable[Unit]):
        self.units: list[Unit] = list(units)
        if not self.units:
            raise ValueError("pool must contain at least one unit")
        self._pos: dict[str, int] = {}
        for i, u in enumerate(self.units):
            if u.id in self._pos:
                raise DuplicateUnitError(f"duplicate unit id {u.id!r}")
            self._pos[u.id] = i
        with_truth = sum(u.true_value is not None for u in self.units)
        if with_truth not in (0, len(self.units)):
            raise ModeError("pool mixes units with and without true values")
        self.simulation_mode = with_truth > 0

    @property
    def N(self) -> int:
        return len(self.units)

    @property
    def ids(self) -> list[str]:
        return [u.id for u in self.units]

    def __contains__(self, uid: str) -> bool:
        return uid in self._pos

    def __iter__(self) -> Iterator[Unit]:
        return iter(self.units)

    def unit(self, uid: str) -> Unit:
        return self.units[self._pos[uid]]

    def position(self, uid: str) -> int:
        return self._pos[uid]

    def truth(self) -> np.ndarray:
        """True values in pool order; simulation mode only."""
        if not self.simulation_mode:
            raise ModeError("true values unavailable in live mode")
        return np.array([u.true_value for u in self.units], dtype=float)


class LabeledSet:
    """Labeled units with their values, kept in acquisition order."""

    def __init__(self, entries: Iterable[tuple[str, float]] = ()):
        self._values: dict[str, float] = {}
        for uid, value in entries:
            self.add(uid, value)

    def add(self, uid: str, value: float):
        if uid in self._values:
            raise DuplicateUnitError(f"unit {uid!r} already labeled")
        v = float(value)
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"label for {uid!r} must be finite and >= 0, got {value}")
        self._values[uid] = v

    def __contains__(self, uid: str) -> bool:
        return uid in self._values

    def __len__(self) -> int:
        return len(self._values)

    @property
    def ids(self) -> list[str]:
        return list(self._values)

    def value(self, uid: str) -> float:
        return self._values[uid]

    def items(self) -> list[tuple[str, float]]:
        return list(self._values.items())

    def total(self) -> float:
        return float(sum(self._values.values()))

    def copy(self) -> "LabeledSet":
        return LabeledSet(self._values.items())


def load_pool(path: str | Path) -> UnitPool:
    """Read a pool file: one ``id <TAB> payload_ref [<TAB> true_value]`` record per line.

    Lines starting with ``#`` and blank lines are skipped. Mode (simulation vs
    live) is inferred from the presence of the value column and must be
    consistent across records.
    """
    units: list[Unit] = []
    seen: set[str] = set()
    mode: bool | None = None
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) == 2:
                uid, ref = fields
                value = None
            elif len(fields) == 3:
                uid, ref = fields[0], fields[1]
                try:
                    value = float(fields[2])
                except ValueError:
                    raise PoolFormatError(line_no, f"bad true value {fields[2]!r}") from None
                if not math.isfinite(value) or value < 0:
                    raise PoolFormatError(line_no, f"true value must be finite and >= 0, got {value}")
            else:
                raise PoolFormatError(line_no, f"expected 2 or 3 tab-separated fields, got {len(fields)}")
            if not uid:
                raise PoolFormatError(line_no, "empty unit id")
            if uid in seen:
                raise DuplicateUnitError(f"duplicate unit id {uid!r} (line {line_no})")
            seen.add(uid)
            has_value = value is not None
            if mode is None:
                mode = has_value
            elif mode != has_value:
                raise ModeError(f"line {line_no}: record mixes simulation and live modes")
            units.append(Unit(uid, ref, value))
    if not units:
        raise PoolFormatError(0, "pool file contains no records")
    return UnitPool(units)


def write_pool(pool: UnitPool, path: str | Path):
    """Write a pool in the same tab-separated format ``load_pool`` reads."""
    with open(path, "w", encoding="utf-8") as fh:
        for u in pool.units:
            if u.true_value is None:
                fh.write(f"{u.id}\t{u.payload_ref}\n")
            else:
                fh.write(f"{u.id}\t{u.payload_ref}\t{u.true_value!r}\n")


def total_true(pool: UnitPool) -> float:
    """Sum of true values over the whole pool; simulation mode only."""
    return float(pool.truth().sum())


def partial_sum(pool: UnitPool, labeled: LabeledSet) -> float:
    """Sum of labeled values, in acquisition order."""
    for uid in labeled.ids:
        if uid not in pool:
            raise KeyError(f"labeled unit {uid!r} not in pool")
    return float(sum(v for _, v in labeled.items()))

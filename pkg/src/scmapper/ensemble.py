"""Geometry and design rate of (dv, dc, L, w) spatially coupled ensembles."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import ParameterError


class Boundary(str, Enum):
    TWO_SIDED = "two_sided"
    CIRCULAR = "circular"


@dataclass(frozen=True)
class EnsembleParams:
    dv: int
    dc: int
    L: int
    w: int
    boundary: Boundary = Boundary.TWO_SIDED

    def __post_init__(self):
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if self.dv < 2:
            raise ParameterError(f"dv must be >= 2, got {self.dv}")
        if self.dc <= self.dv:
            raise ParameterError(f"dc must exceed dv, got dc={self.dc}, dv={self.dv}")
        if self.L < 1 or self.w < 1:
            raise ParameterError(f"L and w must be >= 1, got L={self.L}, w={self.w}")
        if self.boundary is Boundary.CIRCULAR and self.w > self.L:
            raise ParameterError(f"circular ensembles need w <= L, got w={self.w}, L={self.L}")

    @property
    def circular(self) -> bool:
        return self.boundary is Boundary.CIRCULAR

    def as_dict(self) -> dict:
        return {"dv": self.dv, "dc": self.dc, "L": self.L, "w": self.w, "boundary": self.boundary.value}


@dataclass(frozen=True)
class PositionLayout:
    """Variable-node positions tracked by density evolution.

    ``vn_positions`` lists every position whose erasure probability is part
    of the state, in order; ``known_positions`` is the subset pinned to zero.
    """

    vn_positions: range
    known_positions: frozenset
    L: int
    circular: bool

    def index(self, j: int) -> int:
        """Effective position of a raw index: identity, or 1..L modulo L."""
        if self.circular:
            return (j - 1) % self.L + 1
        return j

    @property
    def data_slice(self) -> slice:
        """Slice of state arrays holding positions 1..L."""
        off = 1 - self.vn_positions.start
        return slice(off, off + self.L)


def layout(p: EnsembleParams) -> PositionLayout:
    if p.circular:
        return PositionLayout(range(1, p.L + 1), frozenset(), p.L, True)
    known = set(range(-p.w + 2, 1)) | set(range(p.L + 1, p.L + p.w))
    return PositionLayout(range(-p.w + 2, p.L + p.w), frozenset(known), p.L, False)


def design_rate(p: EnsembleParams) -> float:
    """Design rate; the two-sided chain loses rate to its terminated ends."""
    base = 1.0 - p.dv / p.dc
    if p.circular:
        return base
    s = sum((i / p.w) ** p.dc for i in range(p.w + 1))
    return base - (p.dv / p.dc) * (p.w + 1 - 2 * s) / p.L

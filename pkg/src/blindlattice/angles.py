"""Discrete measurement angles k*pi/4."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True, order=True)
class Angle8:
    """An angle ``k * pi / 4`` with ``k`` reduced mod 8.

    Arithmetic stays in the integers so that adaptive angle updates never
    accumulate floating point drift; radians are produced only on demand.
    """

    k: int = 0

    def __post_init__(self):
        if isinstance(self.k, bool) or not isinstance(self.k, int):
            raise TypeError(f"Angle8 needs an integer multiple of pi/4, got {self.k!r}")
        object.__setattr__(self, "k", self.k % 8)

    def __add__(self, other: Angle8 | int) -> Angle8:
        return Angle8(self.k + _as_k(other))

    __radd__ = __add__

    def __sub__(self, other: Angle8 | int) -> Angle8:
        return Angle8(self.k - _as_k(other))

    def __neg__(self) -> Angle8:
        return Angle8(-self.k)

    def __mul__(self, factor: int) -> Angle8:
        if isinstance(factor, bool) or not isinstance(factor, int):
            return NotImplemented
        return Angle8(self.k * factor)

    __rmul__ = __mul__

    @property
    def radians(self) -> float:
        return self.k * math.pi / 4

    @classmethod
    def from_radians(cls, theta: float, tol: float = 1e-9) -> Angle8:
        k = theta / (math.pi / 4)
        nearest = round(k)
        if abs(k - nearest) > tol:
            raise ValueError(f"{theta} is not a multiple of pi/4")
        return cls(int(nearest))

    def __str__(self) -> str:
        return f"{self.k}pi/4"


def _as_k(value: Angle8 | int) -> int:
    if isinstance(value, Angle8):
        return value.k
    if isinstance(value, int) and not isinstance(value, bool):
        return value
    return NotImplemented


PI = Angle8(4)
HALF_PI = Angle8(2)
ALL_ANGLES = tuple(Angle8(k) for k in range(8))

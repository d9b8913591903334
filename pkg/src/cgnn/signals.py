"""Finitely supported sequences over Z with explicit offsets."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class Layout(NamedTuple):
    """Index window ``offset .. offset + length - 1`` of a coefficient vector."""

    offset: int
    length: int

    @property
    def stop(self) -> int:
        return self.offset + self.length


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


def _window(offset: int, values: np.ndarray, lo: int, hi: int) -> np.ndarray:
    out = np.zeros(hi - lo)
    a = max(lo, offset)
    b = min(hi, offset + values.size)
    if b > a:
        out[a - lo : b - lo] = values[a - offset : b - offset]
    return out


@dataclass(frozen=True)
class DiscreteSignal:
    """Element of c_00(Z): ``values[i]`` is the entry at index ``offset + i``."""

    offset: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "offset", int(self.offset))
        object.__setattr__(self, "values", _frozen(self.values))

    def __len__(self) -> int:
        return self.values.size

    @property
    def layout(self) -> Layout:
        return Layout(self.offset, self.values.size)

    @property
    def stop(self) -> int:
        return self.offset + self.values.size

    def __getitem__(self, n: int) -> float:
        i = n - self.offset
        return float(self.values[i]) if 0 <= i < self.values.size else 0.0

    def window(self, lo: int, hi: int) -> np.ndarray:
        """Dense copy of the entries at indices lo..hi-1 (zero outside support)."""
        return _window(self.offset, self.values, lo, hi)

    def normalize(self) -> "DiscreteSignal":
        """Trim exact leading/trailing zeros."""
        nz = np.flatnonzero(self.values)
        if nz.size == 0:
            return DiscreteSignal(0, np.zeros(0))
        return DiscreteSignal(self.offset + nz[0], self.values[nz[0] : nz[-1] + 1])

    def dot(self, other: "DiscreteSignal") -> float:
        lo = max(self.offset, other.offset)
        hi = min(self.stop, other.stop)
        if hi <= lo:
            return 0.0
        return float(np.dot(self.window(lo, hi), other.window(lo, hi)))

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def scaled(self, a: float) -> "DiscreteSignal":
        return DiscreteSignal(self.offset, a * self.values)

    def reflected(self) -> "DiscreteSignal":
        """t(n) -> t(-n)."""
        return DiscreteSignal(-(self.stop - 1), self.values[::-1])

    def __add__(self, other: "DiscreteSignal") -> "DiscreteSignal":
        lo = min(self.offset, other.offset)
        hi = max(self.stop, other.stop)
        return DiscreteSignal(lo, self.window(lo, hi) + other.window(lo, hi))

    def __sub__(self, other: "DiscreteSignal") -> "DiscreteSignal":
        return self + other.scaled(-1.0)

    def to_json(self) -> dict:
        return {"offset": self.offset, "values": self.values.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "DiscreteSignal":
        return cls(doc["offset"], doc["values"])

    @classmethod
    def delta(cls, n: int = 0) -> "DiscreteSignal":
        return cls(n, [1.0])


@dataclass(frozen=True)
class CoeffSignal:
    """Scaling coefficients of f = sum_n c_n phi_{j,n} in V_j.

    Because {phi_{j,n}} is orthonormal, the L2 norm of f is the Euclidean
    norm of ``coeffs``.
    """

    scale: int
    offset: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "scale", int(self.scale))
        object.__setattr__(self, "offset", int(self.offset))
        object.__setattr__(self, "coeffs", _frozen(self.coeffs))

    def __len__(self) -> int:
        return self.coeffs.size

    @property
    def layout(self) -> Layout:
        return Layout(self.offset, self.coeffs.size)

    @property
    def stop(self) -> int:
        return self.offset + self.coeffs.size

    def as_discrete(self) -> DiscreteSignal:
        return DiscreteSignal(self.offset, self.coeffs)

    def window(self, lo: int, hi: int) -> np.ndarray:
        return _window(self.offset, self.coeffs, lo, hi)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def dot(self, other: "CoeffSignal") -> float:
        if other.scale != self.scale:
            raise ValueError(f"scale mismatch: {self.scale} vs {other.scale}")
        return self.as_discrete().dot(other.as_discrete())

    def allclose(self, other: "CoeffSignal", atol: float = 1e-12) -> bool:
        """Equality as elements of V_j, ignoring zero padding."""
        if other.scale != self.scale:
            return False
        lo = min(self.offset, other.offset)
        hi = max(self.stop, other.stop)
        return bool(np.allclose(self.window(lo, hi), other.window(lo, hi), rtol=0, atol=atol))

    def to_json(self) -> dict:
        return {"scale": self.scale, "offset": self.offset, "values": self.coeffs.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "CoeffSignal":
        return cls(doc["scale"], doc["offset"], doc["values"])

    @classmethod
    def from_discrete(cls, scale: int, sig: DiscreteSignal) -> "CoeffSignal":
        return cls(scale, sig.offset, sig.values)

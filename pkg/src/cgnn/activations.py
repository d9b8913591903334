"""Scalar activations with derivative and admissibility metadata."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["UnknownActivation", "ActivationSpec", "KINDS"]

KINDS = ("leaky_relu", "relu", "hp", "sigmoid", "tanh", "softplus", "elu", "identity")


class UnknownActivation(ValueError):
    pass


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class ActivationSpec:
    """An entrywise nonlinearity.

    ``alpha`` is the negative-side slope for leaky_relu and the scale for elu;
    it is ignored by the other kinds. Metadata properties describe the
    closed-form function and are spot-checked by the injectivity module.
    """

    kind: str = "leaky_relu"
    alpha: float = 0.2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnknownActivation(f"unknown activation {self.kind!r}; expected one of {KINDS}")

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        k = self.kind
        if k == "leaky_relu":
            return np.where(x > 0, x, self.alpha * x)
        if k == "relu":
            return np.maximum(x, 0.0)
        if k == "hp":
            return np.abs(x) * np.arctan(x)
        if k == "sigmoid":
            return _sigmoid(x)
        if k == "tanh":
            return np.tanh(x)
        if k == "softplus":
            return np.logaddexp(0.0, x)
        if k == "elu":
            return np.where(x > 0, x, self.alpha * np.expm1(np.minimum(x, 0.0)))
        return x.copy()

    def derivative(self, x):
        # piecewise-linear kinds take the negative-side slope at 0
        x = np.asarray(x, dtype=np.float64)
        k = self.kind
        if k == "leaky_relu":
            return np.where(x > 0, 1.0, self.alpha)
        if k == "relu":
            return np.where(x > 0, 1.0, 0.0)
        if k == "hp":
            return np.abs(np.arctan(x)) + np.abs(x) / (1.0 + x * x)
        if k == "sigmoid":
            s = _sigmoid(x)
            return s * (1.0 - s)
        if k == "tanh":
            return 1.0 - np.tanh(x) ** 2
        if k == "softplus":
            return _sigmoid(x)
        if k == "elu":
            return np.where(x > 0, 1.0, self.alpha * np.exp(np.minimum(x, 0.0)))
        return np.ones_like(x)

    # -- metadata --------------------------------------------------------

    @property
    def is_c1(self) -> bool:
        if self.kind in ("leaky_relu",):
            return self.alpha == 1.0
        if self.kind == "elu":
            return self.alpha == 1.0
        return self.kind != "relu"

    @property
    def zero_at_zero(self) -> bool:
        return self.kind not in ("sigmoid", "softplus")

    @property
    def sign_preserving(self) -> bool:
        if self.kind in ("sigmoid", "softplus", "relu"):
            return False
        if self.kind in ("leaky_relu", "elu"):
            return self.alpha > 0
        return True

    @property
    def injective(self) -> bool:
        if self.kind == "relu":
            return False
        if self.kind in ("leaky_relu", "elu"):
            return self.alpha > 0
        return True

    @property
    def derivative_bounds(self) -> tuple[float, float]:
        """(inf, sup) of sigma' over the real line."""
        k = self.kind
        if k == "leaky_relu":
            return min(self.alpha, 1.0), max(self.alpha, 1.0)
        if k == "relu":
            return 0.0, 1.0
        if k == "hp":
            # sup of atan|x| + |x|/(1+x^2) is below pi/2 + 1/2
            return 0.0, math.pi / 2 + 0.5
        if k == "sigmoid":
            return 0.0, 0.25
        if k == "tanh":
            return 0.0, 1.0
        if k == "softplus":
            return 0.0, 1.0
        if k == "elu":
            return 0.0, max(self.alpha, 1.0)
        return 1.0, 1.0

    @property
    def lipschitz(self) -> float:
        return self.derivative_bounds[1]

    @property
    def linear_growth(self) -> float | None:
        """Smallest L with |sigma(x)| <= L|x|, or None if no such L exists."""
        k = self.kind
        if k in ("sigmoid", "softplus"):
            return None
        if k == "leaky_relu":
            return max(abs(self.alpha), 1.0)
        if k == "hp":
            return math.pi / 2
        if k == "elu":
            return max(self.alpha, 1.0)
        return 1.0

    @property
    def positively_homogeneous(self) -> bool:
        return self.kind in ("leaky_relu", "relu", "identity")

    def metadata(self) -> dict:
        lo, hi = self.derivative_bounds
        return {
            "c1": self.is_c1,
            "zero_at_zero": self.zero_at_zero,
            "sign_preserving": self.sign_preserving,
            "injective": self.injective,
            "derivative_inf": lo,
            "derivative_sup": hi,
            "linear_growth": self.linear_growth,
        }

    def to_json(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha}

    @classmethod
    def from_json(cls, doc: dict) -> "ActivationSpec":
        return cls(doc["kind"], float(doc.get("alpha", 0.2)))

"""Strided and fractionally strided convolutions on finitely supported sequences.

All signals carry an explicit integer offset, so nothing is ever truncated or
padded implicitly. The continuous strided convolution between scaling spaces
V_j and V_{j+nu} reduces to a transposed convolution with the effective filter
``d * eta_nu``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .signals import CoeffSignal, DiscreteSignal
from .wavelets import EtaSequence

__all__ = [
    "ScaleMismatch",
    "StrideSpec",
    "conv",
    "conv_strided_down",
    "deconv_strided_up",
    "deconv_subfilters",
    "strided_adjoint",
    "adjoint_check",
    "eta_signal",
    "deta_filter",
    "continuous_strided_conv",
]


class ScaleMismatch(ValueError):
    pass


@dataclass(frozen=True)
class StrideSpec:
    """Stride 2**nu ("down") or 2**-nu ("up")."""

    direction: str
    nu: int

    def __post_init__(self):
        if self.direction not in ("down", "up"):
            raise ValueError(f"direction must be 'down' or 'up', got {self.direction!r}")
        if int(self.nu) != self.nu or self.nu < 0:
            raise ValueError("nu must be a non-negative integer")

    @property
    def factor(self) -> int:
        return 2**self.nu

    @property
    def scale_change(self) -> int:
        """j_out - j_in."""
        return self.nu if self.direction == "up" else -self.nu


def _check_stride(s_inv):
    if int(s_inv) != s_inv or s_inv < 1:
        raise ValueError(f"stride must be a positive integer, got {s_inv}")
    return int(s_inv)


def conv(x: DiscreteSignal, t: DiscreteSignal) -> DiscreteSignal:
    """(x * t)(n) = sum_m x(m) t(n - m)."""
    if len(x) == 0 or len(t) == 0:
        return DiscreteSignal(x.offset + t.offset, np.zeros(0))
    return DiscreteSignal(x.offset + t.offset, np.convolve(x.values, t.values))


def conv_strided_down(x: DiscreteSignal, t: DiscreteSignal, s_inv: int) -> DiscreteSignal:
    """(x *_s t)(n) = (x * t)(s n): the full convolution kept at multiples of s."""
    s = _check_stride(s_inv)
    full = conv(x, t)
    if len(full) == 0:
        return full
    first = -((-full.offset) // s)  # ceil
    last = (full.stop - 1) // s
    if last < first:
        return DiscreteSignal(first, np.zeros(0))
    idx = np.arange(first, last + 1) * s - full.offset
    return DiscreteSignal(first, full.values[idx])


def deconv_strided_up(x: DiscreteSignal, t: DiscreteSignal, s_inv: int) -> DiscreteSignal:
    """Transposed convolution: y(n) = sum_m x(m) t(n - s m)."""
    s = _check_stride(s_inv)
    offset = s * x.offset + t.offset
    if len(x) == 0 or len(t) == 0:
        return DiscreteSignal(offset, np.zeros(0))
    out = _kernels.upconv(x.values[None, None, :], t.values[:, None, None], s)
    return DiscreteSignal(offset, out[0, 0])


def deconv_subfilters(x: DiscreteSignal, t: DiscreteSignal, s_inv: int) -> DiscreteSignal:
    """Same map as deconv_strided_up, computed by polyphase splitting.

    With t_r(k) = t(s k + r), output entries n = s k + r equal (x * t_r)(k).
    """
    s = _check_stride(s_inv)
    offset = s * x.offset + t.offset
    if len(x) == 0 or len(t) == 0:
        return DiscreteSignal(offset, np.zeros(0))
    out = np.zeros(s * (len(x) - 1) + len(t))
    for r in range(s):
        # taps of t whose absolute index is congruent to r mod s
        first = (r - t.offset) % s
        tr = t.values[first::s]
        if tr.size == 0:
            continue
        part = np.convolve(x.values, tr)
        # absolute index of part[0] is s*x.offset + t.offset + first
        out[first : first + s * part.size : s] = part
    return DiscreteSignal(offset, out)


def strided_adjoint(y: DiscreteSignal, t: DiscreteSignal, s_inv: int) -> DiscreteSignal:
    """Adjoint of x -> conv_strided_down(x, t, s): (A* y)(n) = sum_m y(m) t(s m - n).

    This is deconv_strided_up with the reflected filter, not with t itself.
    """
    return deconv_strided_up(y, t.reflected(), s_inv)


def adjoint_check(t: DiscreteSignal, s_inv: int, trials: int = 10, seed: int = 0) -> float:
    """Largest |<A x, y> - <x, A* y>| over random finitely supported x, y."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = DiscreteSignal(int(rng.integers(-10, 10)), rng.standard_normal(int(rng.integers(1, 20))))
        y = DiscreteSignal(int(rng.integers(-10, 10)), rng.standard_normal(int(rng.integers(1, 20))))
        lhs = conv_strided_down(x, t, s_inv).dot(y)
        rhs = x.dot(strided_adjoint(y, t, s_inv))
        worst = max(worst, abs(lhs - rhs))
    return worst


def eta_signal(eta: EtaSequence) -> DiscreteSignal:
    return DiscreteSignal(eta.r_min, eta.values)


def deta_filter(d: DiscreteSignal, eta: EtaSequence) -> DiscreteSignal:
    """Effective discrete filter d * eta_nu."""
    return conv(d, eta_signal(eta))


def continuous_strided_conv(f: CoeffSignal, g, eta: EtaSequence) -> CoeffSignal:
    """Coefficients of P_{V_{j+nu}}(f * g) for f in V_j and g in V_{j+nu}.

    ``g`` is a CoeffSignal at scale j + nu or a bare DiscreteSignal of its
    coefficients. The result is 2**(-j/2) * deconv_strided_up(c, d * eta, 2**nu).
    """
    nu = eta.nu
    if isinstance(g, CoeffSignal):
        if g.scale != f.scale + nu:
            raise ScaleMismatch(f"filter scale {g.scale} != {f.scale} + {nu}")
        g = g.as_discrete()
    out = deconv_strided_up(f.as_discrete(), deta_filter(g, eta), 2**nu)
    return CoeffSignal(f.scale + nu, out.offset, out.values * 2.0 ** (-f.scale / 2))

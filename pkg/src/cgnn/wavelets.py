"""Daubechies multiresolution analysis: filters, cascade, eta kernels, scale changes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from . import _kernels
from .signals import CoeffSignal, Layout

__all__ = [
    "UnsupportedOrder",
    "ScalingFilter",
    "CascadeTable",
    "EtaSequence",
    "ScalingFamily",
    "daubechies_filter",
    "cascade_evaluate",
    "eta",
    "refine",
    "restrict",
    "pointwise_values",
    "refine_array",
    "restrict_array",
    "refined_layout",
    "restricted_layout",
    "scaling_family",
]

SQRT2 = np.sqrt(2.0)

# Extremal-phase (minimal-phase) Daubechies scaling filters h[0..2N-1],
# normalized to sum sqrt(2). Computed by spectral factorization at 60 digits.
_DAUBECHIES_TAPS = {
    1: (
        0.7071067811865476,
        0.7071067811865476,
    ),
    2: (
        0.48296291314453416,
        0.8365163037378079,
        0.2241438680420134,
        -0.12940952255126037,
    ),
    3: (
        0.33267055295008263,
        0.8068915093110925,
        0.45987750211849154,
        -0.13501102001025458,
        -0.08544127388202666,
        0.03522629188570953,
    ),
    4: (
        0.2303778133088965,
        0.7148465705529157,
        0.6308807679298589,
        -0.027983769416859854,
        -0.18703481171909309,
        0.030841381835560764,
        0.0328830116668852,
        -0.010597401785069032,
    ),
    5: (
        0.16010239797419293,
        0.6038292697971896,
        0.7243085284377729,
        0.13842814590132074,
        -0.24229488706638203,
        -0.032244869584638375,
        0.07757149384004572,
        -0.006241490212798274,
        -0.012580751999081999,
        0.0033357252854737712,
    ),
    6: (
        0.11154074335010947,
        0.49462389039845306,
        0.7511339080210954,
        0.31525035170919763,
        -0.22626469396543983,
        -0.12976686756726194,
        0.09750160558732304,
        0.027522865530305727,
        -0.03158203931748603,
        0.0005538422011614961,
        0.004777257510945511,
        -0.0010773010853084796,
    ),
    7: (
        0.07785205408500918,
        0.3965393194819173,
        0.7291320908462351,
        0.4697822874051931,
        -0.14390600392856498,
        -0.22403618499387498,
        0.07130921926683026,
        0.08061260915108308,
        -0.03802993693501441,
        -0.01657454163066688,
        0.01255099855609984,
        0.0004295779729213665,
        -0.0018016407040474908,
        0.00035371379997452024,
    ),
    8: (
        0.05441584224310401,
        0.31287159091429995,
        0.6756307362972898,
        0.5853546836542067,
        -0.015829105256349306,
        -0.2840155429615469,
        0.0004724845739132828,
        0.12874742662047847,
        -0.017369301001807547,
        -0.044088253930794755,
        0.013981027917398282,
        0.008746094047405777,
        -0.004870352993451574,
        -0.00039174037337694705,
        0.0006754494064505693,
        -0.00011747678412476953,
    ),
    9: (
        0.038077947363878345,
        0.24383467461259034,
        0.6048231236901112,
        0.6572880780513005,
        0.13319738582500756,
        -0.2932737832791749,
        -0.09684078322297646,
        0.14854074933810638,
        0.03072568147933338,
        -0.06763282906132997,
        0.00025094711483145197,
        0.022361662123679096,
        -0.004723204757751397,
        -0.00428150368246343,
        0.0018476468830562265,
        0.00023038576352319597,
        -0.0002519631889427101,
        3.93473203162716e-05,
    ),
    10: (
        0.026670057900555554,
        0.1881768000776915,
        0.5272011889317256,
        0.6884590394536035,
        0.2811723436605775,
        -0.24984642432731538,
        -0.19594627437737705,
        0.12736934033579325,
        0.09305736460357235,
        -0.07139414716639708,
        -0.029457536821875813,
        0.033212674059341,
        0.0036065535669561697,
        -0.010733175483330575,
        0.001395351747052901,
        0.001992405295185056,
        -0.0006858566949597116,
        -0.00011646685512928545,
        9.358867032006959e-05,
        -1.3264202894521244e-05,
    ),
}


class UnsupportedOrder(ValueError):
    """Requested Daubechies order outside the tabulated range 1..10."""


@dataclass(frozen=True)
class ScalingFilter:
    """Two-scale weights: phi(x) = sqrt(2) * sum_k h[k] phi(2x - k)."""

    vanishing_moments: int
    taps: np.ndarray = field(repr=False)

    def __post_init__(self):
        taps = np.array(self.taps, dtype=np.float64).reshape(-1)
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)
        if taps.size != 2 * self.vanishing_moments:
            raise ValueError("a filter with N vanishing moments has 2N taps")
        if abs(taps.sum() - SQRT2) > 1e-12:
            raise ValueError(f"taps sum to {taps.sum()!r}, expected sqrt(2)")
        if self.orthonormality_defect() > 1e-10:
            raise ValueError("taps are not orthonormal under even shifts")

    @property
    def length(self) -> int:
        return self.taps.size

    @property
    def support(self) -> tuple[int, int]:
        return 0, self.taps.size - 1

    def orthonormality_defect(self) -> float:
        h = self.taps
        worst = 0.0
        for m in range(0, h.size // 2):
            s = float(np.dot(h[: h.size - 2 * m], h[2 * m :]))
            worst = max(worst, abs(s - (1.0 if m == 0 else 0.0)))
        return worst

    def to_json(self) -> dict:
        return {"N": self.vanishing_moments, "taps": self.taps.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "ScalingFilter":
        return cls(int(doc["N"]), doc["taps"])


@lru_cache(maxsize=None)
def daubechies_filter(N: int) -> ScalingFilter:
    """Daubechies scaling filter with ``N`` vanishing moments (N=1 is Haar)."""
    if N not in _DAUBECHIES_TAPS:
        raise UnsupportedOrder(f"Daubechies order must be in 1..10, got {N}")
    return ScalingFilter(N, _DAUBECHIES_TAPS[N])


# ---------------------------------------------------------------------------
# scale changes on coefficient arrays
# ---------------------------------------------------------------------------


def refined_layout(layout: Layout, filter_length: int) -> Layout:
    o, n = layout
    return Layout(2 * o, 2 * (n - 1) + filter_length)


def restricted_layout(layout: Layout, filter_length: int) -> Layout:
    o, n = layout
    lo = -((filter_length - 1 - o) // 2)  # ceil((o - L + 1) / 2)
    hi = (o + n - 1) // 2
    return Layout(lo, hi - lo + 1)


def refine_array(c: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """One synthesis step along the last axis, zero detail coefficients."""
    c = np.asarray(c, dtype=np.float64)
    lead, n = c.shape[:-1], c.shape[-1]
    out = _kernels.upconv(c.reshape(-1, 1, n), taps[:, None, None], 2)
    return out.reshape(lead + (out.shape[-1],))


def restrict_array(c: np.ndarray, layout: Layout, taps: np.ndarray) -> tuple[np.ndarray, Layout]:
    """One analysis step along the last axis; exact transpose of refine_array."""
    c = np.asarray(c, dtype=np.float64)
    L = taps.size
    out_layout = restricted_layout(layout, L)
    frame = refined_layout(out_layout, L)
    lead, n = c.shape[:-1], c.shape[-1]
    padded = np.zeros((int(np.prod(lead, dtype=int)), 1, frame.length))
    start = layout.offset - frame.offset
    padded[:, 0, start : start + n] = c.reshape(-1, n)
    out = _kernels.upconv_adjoint(padded, taps[:, None, None], 2, out_layout.length)
    return out.reshape(lead + (out_layout.length,)), out_layout


def refine(sig: CoeffSignal, filt: ScalingFilter) -> CoeffSignal:
    """Coefficients of the same function in V_{j+1}: c'_m = sum_n h[m-2n] c_n."""
    out = refine_array(sig.coeffs, filt.taps)
    return CoeffSignal(sig.scale + 1, 2 * sig.offset, out)


def restrict(sig: CoeffSignal, filt: ScalingFilter) -> CoeffSignal:
    """Coefficients of the projection onto V_{j-1}: c'_n = sum_m h[m-2n] c_m."""
    out, layout = restrict_array(sig.coeffs, sig.layout, filt.taps)
    return CoeffSignal(sig.scale - 1, layout.offset, out)


# ---------------------------------------------------------------------------
# cascade
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CascadeTable:
    """Values of phi on the grid k * 2**-K, k = 0 .. (2N-1) * 2**K.

    The cascade iterate is piecewise constant: ``samples[k]`` is its value on
    the cell [k h, (k+1) h). The last node closes the support and is zero.
    """

    resolution_exponent: int
    samples: np.ndarray = field(repr=False)

    @property
    def step(self) -> float:
        return 2.0 ** -self.resolution_exponent

    @property
    def cells(self) -> np.ndarray:
        return self.samples[:-1]

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.samples.size) * self.step

    def integral(self) -> float:
        return float(self.cells.sum() * self.step)

    def __call__(self, x):
        """Evaluate the piecewise-constant iterate at arbitrary points."""
        x = np.asarray(x, dtype=np.float64)
        k = np.floor(x / self.step).astype(np.int64)
        inside = (k >= 0) & (k < self.cells.size)
        out = np.zeros(x.shape)
        out[inside] = self.cells[k[inside]]
        return out


def cascade_evaluate(filt: ScalingFilter, K: int) -> CascadeTable:
    """Run K cascade refinements starting from the indicator of [0, 1)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    c = np.array([1.0])
    for _ in range(K):
        c = refine_array(c, filt.taps)
    support = filt.length - 1
    samples = np.zeros(support * 2**K + 1)
    samples[: c.size] = c * 2.0 ** (K / 2)
    samples.setflags(write=False)
    return CascadeTable(K, samples)


# ---------------------------------------------------------------------------
# eta kernels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EtaSequence:
    """eta_nu(r) = int int phi(t) phi(z) phi(z - 2**nu t + r) dz dt on its support."""

    nu: int
    r_min: int
    values: np.ndarray = field(repr=False)
    K: int = 0

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def support_range(self) -> tuple[int, int]:
        return self.r_min, self.r_min + self.values.size - 1

    def __call__(self, r: int) -> float:
        i = int(r) - self.r_min
        return float(self.values[i]) if 0 <= i < self.values.size else 0.0

    def to_json(self) -> dict:
        return {"nu": self.nu, "r_min": self.r_min, "values": self.values.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "EtaSequence":
        return cls(int(doc["nu"]), int(doc["r_min"]), doc["values"])

    @classmethod
    def dirac(cls, nu: int = 1) -> "EtaSequence":
        return cls(nu, 0, [1.0])


def eta(filt: ScalingFilter, nu: int, K: int = 10) -> EtaSequence:
    """Cross-scale kernel eta_nu computed by quadrature on the cascade grid.

    With A(u) = int phi(z) phi(z + u) dz the kernel is
    eta_nu(r) = int phi(t) A(r - 2**nu t) dt. For the piecewise-constant
    cascade iterate A is piecewise linear with nodes on the grid, so the
    cell-by-cell integration below is exact for that iterate (and for Haar).
    """
    if nu < 1:
        raise ValueError("nu must be >= 1")
    if K < nu:
        raise ValueError("quadrature exponent K must be >= nu")
    table = cascade_evaluate(filt, K)
    phi = table.cells
    h = table.step
    nc = phi.size
    S = filt.length - 1
    step = 2**nu

    A = np.correlate(phi, phi, mode="full") * h  # A[k + nc - 1] = A(k h)
    # T[a]: mean of A over the node interval [a-1, a]; C[q]: mean over [q - 2**nu, q]
    Apad = np.concatenate(([0.0], A, [0.0]))  # Apad[a + nc] = A(a h), a in [-nc, nc]
    T = 0.5 * (Apad[:-1] + Apad[1:])  # T[a + nc] for a in [-nc + 1, nc]
    csum = np.concatenate(([0.0], np.cumsum(T)))
    # C index range: a in [-nc + 1, nc]; C[q] = mean(T[q-step+1 .. q])
    def C(q):
        hi = np.clip(q + nc, 0, T.size)  # exclusive upper in T-index
        lo = np.clip(q - step + 1 + nc - 1, 0, T.size)
        return (csum[hi] - csum[lo]) / step

    r_min = -S + 1
    r_max = (step + 1) * S - 1
    i = np.arange(nc)
    vals = np.empty(r_max - r_min + 1)
    for idx, r in enumerate(range(r_min, r_max + 1)):
        q = r * 2**K - step * i
        vals[idx] = h * np.dot(phi, C(q))
    return EtaSequence(nu, r_min, vals, K)


# ---------------------------------------------------------------------------
# pointwise values
# ---------------------------------------------------------------------------


def pointwise_values(sig: CoeffSignal, M: int, filt: ScalingFilter, K: int = 10):
    """Approximate f(b) on the grid b = 2**-(j+M) * n from fine-scale coefficients.

    Returns ``(b, values)``.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    fine = sig
    for _ in range(M):
        fine = refine(fine, filt)
    integral = cascade_evaluate(filt, K).integral()
    if abs(integral - 1.0) > 1e-4:
        raise RuntimeError(f"integral of phi evaluated to {integral}, expected 1")
    J = sig.scale + M
    b = (fine.offset + np.arange(len(fine))) * 2.0**-J
    return b, fine.coeffs * 2.0 ** (J / 2) / integral


# ---------------------------------------------------------------------------
# family: filter + cached tables
# ---------------------------------------------------------------------------


class ScalingFamily:
    """A Daubechies scaling function with lazily cached cascade and eta tables."""

    def __init__(self, filt: ScalingFilter, K: int = 10):
        self.filter = filt
        self.K = K
        self._eta: dict[int, EtaSequence] = {}

    @property
    def N(self) -> int:
        return self.filter.vanishing_moments

    @property
    def taps(self) -> np.ndarray:
        return self.filter.taps

    @cached_property
    def cascade(self) -> CascadeTable:
        return cascade_evaluate(self.filter, self.K)

    def eta(self, nu: int) -> EtaSequence:
        if nu not in self._eta:
            self._eta[nu] = eta(self.filter, nu, self.K)
        return self._eta[nu]

    def export_json(self, nus=(1,)) -> str:
        doc = {"filter": self.filter.to_json(), "eta": [self.eta(nu).to_json() for nu in nus]}
        return json.dumps(doc)

    def __repr__(self) -> str:
        return f"ScalingFamily(db{self.N}, K={self.K})"


@lru_cache(maxsize=None)
def scaling_family(N: int, K: int = 10) -> ScalingFamily:
    return ScalingFamily(daubechies_filter(N), K)

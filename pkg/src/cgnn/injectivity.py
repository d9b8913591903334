"""Executable injectivity certificate for a CGNN.

A generator is certified injective when

* eta_1 has a nonzero entry (so the projected continuous convolution keeps
  information),
* the fully connected map has full column rank,
* every conv layer is injective on its input space, shown by full row rank
  of the tap matrix D^l, or failing that by full column rank of the block
  banded matrix of the whole layer, or failing that by brute force,
* the activation is admissible for the chosen nonlinearity mode.

Ranks use singular values with a threshold relative to the largest one, so
verdicts do not change when filters are rescaled.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .activations import ActivationSpec
from .network import CgnnConfig, CgnnParams, layer_layouts
from .signals import CoeffSignal, DiscreteSignal
from .strided import continuous_strided_conv
from .wavelets import EtaSequence, scaling_family

__all__ = [
    "RANK_RTOL",
    "ETA_TOL",
    "SizeGuardExceeded",
    "numerical_rank",
    "LayerMatrixD",
    "build_Dl",
    "build_Dtilde",
    "block_banded",
    "EtaVerdict",
    "check_eta_condition",
    "ActivationVerdict",
    "check_activation",
    "LayerVerdict",
    "InjectivityCertificate",
    "certify",
    "kernel_bruteforce",
]

RANK_RTOL = 1e-8
ETA_TOL = 1e-8
DERIV_FLOOR = 1e-8
MONOTONE_BOUND = 10.0


class SizeGuardExceeded(ValueError):
    pass


def numerical_rank(A, rtol: float = RANK_RTOL) -> int:
    A = np.asarray(A, dtype=np.float64)
    if A.size == 0:
        return 0
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def nullity(A, rtol: float = RANK_RTOL) -> int:
    return A.shape[1] - numerical_rank(A, rtol)


# ---------------------------------------------------------------------------
# layer matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerMatrixD:
    layer: int
    matrix: np.ndarray

    @property
    def required_rank(self) -> int:
        return self.matrix.shape[0]

    def rank(self, rtol=RANK_RTOL) -> int:
        return numerical_rank(self.matrix, rtol)


def _layer_filters(params: CgnnParams, l: int, config: CgnnConfig):
    if not 2 <= l <= config.num_layers or l - 2 >= len(params.conv_filters):
        raise KeyError(f"no conv layer {l}")
    return params.conv_filters[l - 2], config.strides[l - 2]


def build_Dl(params: CgnnParams, l: int, config: CgnnConfig) -> LayerMatrixD:
    """c_(l-1) x (2**nu c_l) matrix with entry (i, k + p c_l) = d_{p,i,k}, p < 2**nu."""
    d, nu = _layer_filters(params, l, config)
    P, cin, cout = d.shape
    s = 2**nu
    D = np.zeros((cin, s * cout))
    for p in range(min(P, s)):
        D[:, p * cout : (p + 1) * cout] = d[p]
    return LayerMatrixD(l, D)


def block_banded(blocks, n_cols: int) -> np.ndarray:
    """Matrix whose (m, n) block is blocks[m - n] when 0 <= m - n < len(blocks)."""
    Q = len(blocks)
    r, c = blocks[0].shape
    out = np.zeros(((n_cols + Q - 1) * r, n_cols * c))
    for n in range(n_cols):
        for q, b in enumerate(blocks):
            out[(n + q) * r : (n + q + 1) * r, n * c : (n + 1) * c] = b
    return out


def dtilde_blocks(d, nu: int) -> list:
    """Blocks (2**nu c_l x c_(l-1)) with entry (k + r c_l, i) = d_{2**nu q + r, i, k}."""
    P, cin, cout = d.shape
    s = 2**nu
    if P % s:
        raise ValueError(f"filter length {P} must be a multiple of the stride {s}")
    blocks = []
    for q in range(P // s):
        B = np.zeros((s * cout, cin))
        for r in range(s):
            B[r * cout : (r + 1) * cout, :] = d[s * q + r].T
        blocks.append(B)
    return blocks


def build_Dtilde(params: CgnnParams, l: int, config: CgnnConfig, N_support: int | None = None) -> np.ndarray:
    """Matrix of the discrete part of layer l on inputs with 2N+1 coefficients per channel.

    Columns are indexed by (position, input channel), rows by
    (output block, phase, output channel). Without ``N_support`` the actual
    input length of layer l in the generator is used.
    """
    d, nu = _layer_filters(params, l, config)
    n_in = layer_layouts(config)[l - 2].length if N_support is None else 2 * N_support + 1
    return block_banded(dtilde_blocks(d, nu), n_in)


# ---------------------------------------------------------------------------
# eta and activation checks
# ---------------------------------------------------------------------------


@dataclass
class EtaVerdict:
    passed: bool
    witness_r: int | None
    max_abs: float
    tol: float
    symbol_min_abs: float = float("nan")
    symbol_max_abs: float = float("nan")


def check_eta_condition(eta: EtaSequence, tol: float = ETA_TOL, n_freq: int = 1024) -> EtaVerdict:
    """Pass iff some |eta(r)| exceeds ``tol``. Also reports the range of |eta-hat| on [0, 1)."""
    v = eta.values
    if v.size == 0:
        return EtaVerdict(False, None, 0.0, tol)
    i = int(np.argmax(np.abs(v)))
    m = float(np.abs(v[i]))
    xi = np.arange(n_freq) / n_freq
    r = eta.r_min + np.arange(v.size)
    symbol = np.abs(np.exp(-2j * np.pi * np.outer(xi, r)) @ v)
    return EtaVerdict(m > tol, eta.r_min + i if m > tol else None, m, tol, float(symbol.min()), float(symbol.max()))


@dataclass
class ActivationVerdict:
    passed: bool
    mode: str
    clause: str | None
    details: dict = field(default_factory=dict)


def check_activation(spec: ActivationSpec, mode: str = "full", n_samples: int = 100_000, bound: float = 50.0) -> ActivationVerdict:
    """Admissibility of sigma.

    ``full``: C^1, sigma(0) = 0, sign preserving, and sampled sigma' bounded
    away from 0 and infinity on [-bound, bound]. ``relaxed``: injective with
    |sigma(x)| <= L |x|. ``injective``: injectivity alone.
    """
    if not isinstance(spec, ActivationSpec):
        raise TypeError("expected an ActivationSpec")
    x = np.linspace(-bound, bound, n_samples)
    y = spec(x)
    details: dict = {"metadata": spec.metadata()}
    # saturating kinds are flat in floating point far out, so injectivity is
    # sampled on a narrower window
    xm = np.linspace(-MONOTONE_BOUND, MONOTONE_BOUND, 10_001)
    monotone = bool(np.all(np.diff(spec(xm)) > 0))
    details["strictly_increasing_on_grid"] = monotone

    def verdict(clause):
        return ActivationVerdict(clause is None, mode, clause, details)

    if mode == "injective":
        return verdict(None if spec.injective and monotone else "injective")
    if mode == "relaxed":
        if not (spec.injective and monotone):
            return verdict("injective")
        L = spec.linear_growth
        ratio = np.abs(y[x != 0]) / np.abs(x[x != 0])
        details["max_growth_ratio"] = float(ratio.max())
        if L is None or abs(float(spec(np.zeros(1))[0])) > 0 or ratio.max() > L * (1 + 1e-12):
            return verdict("linear_growth")
        return verdict(None)
    if mode != "full":
        raise ValueError(f"unknown activation check mode {mode!r}")
    if not spec.is_c1:
        return verdict("c1")
    if not spec.zero_at_zero or float(spec(np.zeros(1))[0]) != 0.0:
        return verdict("zero_at_zero")
    if not spec.sign_preserving or np.any(np.sign(y) != np.sign(x)):
        return verdict("sign_preserving")
    dy = spec.derivative(x)
    details["derivative_min"] = float(dy.min())
    details["derivative_max"] = float(dy.max())
    if not np.all(np.isfinite(dy)) or dy.max() > spec.derivative_bounds[1] * (1 + 1e-12):
        return verdict("derivative_upper_bound")
    if dy.min() <= DERIV_FLOOR:
        return verdict("derivative_lower_bound")
    return verdict(None)


def activation_mode_for(config: CgnnConfig) -> str:
    """Which activation clause the architecture needs."""
    if config.nonlinearity_mode == "coefficient":
        return "injective"
    return "relaxed" if config.wavelet == 1 else "full"


# ---------------------------------------------------------------------------
# brute force oracle
# ---------------------------------------------------------------------------


def layer_matrix_bruteforce(params: CgnnParams, l: int, config: CgnnConfig, N_support: int | None = None,
                            max_channels: int = 8, max_halfwidth: int = 8) -> np.ndarray:
    """Explicit matrix of the linear part of layer l on (span phi_{j,n}, |n| <= N)^c.

    Each column is the layer applied to one basis function, computed with
    continuous_strided_conv channel by channel.
    """
    d, nu = _layer_filters(params, l, config)
    P, cin, cout = d.shape
    if N_support is None:
        n_in = layer_layouts(config)[l - 2].length
        N_support = (n_in - 1) // 2
    n_in = 2 * N_support + 1
    if cin > max_channels or cout > max_channels or N_support > max_halfwidth:
        raise SizeGuardExceeded(f"layer {l}: c={max(cin, cout)}, N={N_support} exceeds guard ({max_channels}, {max_halfwidth})")
    eta = scaling_family(config.wavelet).eta(nu)
    j = config.scales[l - 2]
    cols = []
    for i in range(cin):
        for n in range(-N_support, N_support + 1):
            basis = CoeffSignal(j, n, [1.0])
            outs = []
            for k in range(cout):
                y = continuous_strided_conv(basis, DiscreteSignal(0, d[:, i, k]), eta)
                outs.append(y)
            cols.append(outs)
    lo = min(y.offset for col in cols for y in col)
    hi = max(y.stop for col in cols for y in col)
    A = np.zeros((cout * (hi - lo), cin * n_in))
    for c_idx, col in enumerate(cols):
        A[:, c_idx] = np.concatenate([y.window(lo, hi) for y in col])
    return A


def kernel_bruteforce(params: CgnnParams, l: int, config: CgnnConfig, N_support: int | None = None,
                      max_channels: int = 8, max_halfwidth: int = 8, rtol: float = RANK_RTOL) -> int:
    """Numerical nullspace dimension of layer l's linear part (see layer_matrix_bruteforce)."""
    return nullity(layer_matrix_bruteforce(params, l, config, N_support, max_channels, max_halfwidth), rtol)


# ---------------------------------------------------------------------------
# certificate
# ---------------------------------------------------------------------------


@dataclass
class LayerVerdict:
    layer: int
    rank: int
    required_rank: int
    status: str  # pass | fail | undetermined
    path: str  # D | Dtilde | bruteforce | none
    dtilde_rank: int | None = None
    dtilde_required: int | None = None
    nullity: int | None = None

    @property
    def passed(self) -> bool:
        return self.status == "pass"


@dataclass
class InjectivityCertificate:
    eta_condition: EtaVerdict
    fully_connected: dict
    per_layer: list
    activation: ActivationVerdict
    tolerances: dict

    @property
    def status(self) -> str:
        parts = [self.eta_condition.passed, self.fully_connected["passed"], self.activation.passed]
        statuses = [lv.status for lv in self.per_layer]
        if not all(parts) or "fail" in statuses:
            return "fail"
        if "undetermined" in statuses:
            return "undetermined"
        return "pass"

    @property
    def overall(self) -> bool:
        return self.status == "pass"

    def failing_layers(self) -> list:
        return [lv.layer for lv in self.per_layer if lv.status == "fail"]

    def to_json(self) -> dict:
        return {
            "overall": self.status,
            "eta_condition": asdict(self.eta_condition),
            "fully_connected": self.fully_connected,
            "per_layer": [asdict(lv) for lv in self.per_layer],
            "activation": asdict(self.activation),
            "tolerances": self.tolerances,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, default=float)

    def table(self) -> str:
        rows = [("check", "verdict", "witness")]
        e = self.eta_condition
        rows.append(("eta_1 nonzero", "pass" if e.passed else "fail", f"r={e.witness_r} |eta|={e.max_abs:.4g}"))
        fc = self.fully_connected
        rows.append(("fully connected rank", "pass" if fc["passed"] else "fail", f"{fc['rank']}/{fc['required_rank']}"))
        for lv in self.per_layer:
            w = f"rank D={lv.rank}/{lv.required_rank}"
            if lv.dtilde_rank is not None:
                w += f", rank Dtilde={lv.dtilde_rank}/{lv.dtilde_required}"
            if lv.nullity is not None:
                w += f", nullity={lv.nullity}"
            rows.append((f"layer {lv.layer} ({lv.path})", lv.status, w))
        a = self.activation
        rows.append((f"activation ({a.mode})", "pass" if a.passed else "fail", a.clause or "-"))
        rows.append(("overall", self.status, ""))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


def _certify_layer(params, l, config, rtol, max_channels, max_halfwidth) -> LayerVerdict:
    D = build_Dl(params, l, config)
    rank = D.rank(rtol)
    if rank == D.required_rank:
        return LayerVerdict(l, rank, D.required_rank, "pass", "D")
    d, nu = _layer_filters(params, l, config)
    verdict = LayerVerdict(l, rank, D.required_rank, "fail", "none")
    if d.shape[0] % 2**nu == 0:
        Dt = build_Dtilde(params, l, config)
        verdict.dtilde_rank = numerical_rank(Dt, rtol)
        verdict.dtilde_required = Dt.shape[1]
        if verdict.dtilde_rank == Dt.shape[1]:
            verdict.status, verdict.path = "pass", "Dtilde"
            return verdict
    try:
        verdict.nullity = kernel_bruteforce(params, l, config, None, max_channels, max_halfwidth, rtol)
    except SizeGuardExceeded:
        verdict.status = "undetermined"
        return verdict
    verdict.path = "bruteforce"
    verdict.status = "pass" if verdict.nullity == 0 else "fail"
    return verdict


def certify(params: CgnnParams, config: CgnnConfig, rtol: float = RANK_RTOL, eta_tol: float = ETA_TOL,
            max_channels: int = 8, max_halfwidth: int = 8) -> InjectivityCertificate:
    """Run every check; failures are reported as verdicts, never raised."""
    params.validate(config)
    fam = scaling_family(config.wavelet)
    eta_v = check_eta_condition(fam.eta(1), eta_tol)
    F = params.fc_matrix
    fc_rank = numerical_rank(F, rtol)
    fc = {"passed": fc_rank == F.shape[1], "rank": fc_rank, "required_rank": F.shape[1]}
    layers = [_certify_layer(params, l, config, rtol, max_channels, max_halfwidth) for l in range(2, config.num_layers + 1)]
    act = check_activation(config.activation, activation_mode_for(config))
    tolerances = {"rank_rtol": rtol, "eta_tol": eta_tol, "derivative_floor": DERIV_FLOOR,
                  "bruteforce_max_channels": max_channels, "bruteforce_max_halfwidth": max_halfwidth}
    return InjectivityCertificate(eta_v, fc, layers, act, tolerances)

"""Continuous generative network acting on scaling coefficients.

The generator maps a latent vector z in R^S to a function in V_{j_L}:

    fully connected -> sigma -> (conv layer -> sigma) * (L - 1)

Each conv layer is a continuous transposed convolution from V_{j_{l-1}} to
V_{j_l}; on coefficients it is ``2**(-j/2) * eta * upconv(x, d, 2**nu)``.
Nonlinearities act on the coefficients directly ("coefficient" mode) or on
fine-scale point values reached by M refinements ("pointwise" mode).

Internally everything is batched: a layer state is an array of shape
(batch, channels, n) plus a Layout shared by the whole batch.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .activations import ActivationSpec
from .signals import CoeffSignal, Layout
from .wavelets import (
    ScalingFamily,
    refine_array,
    refined_layout,
    restrict_array,
    scaling_family,
)

__all__ = [
    "PARAMS_VERSION",
    "ShapeError",
    "CgnnConfig",
    "CgnnParams",
    "ChannelSignal",
    "init_params",
    "layer_layouts",
    "fully_connected",
    "conv_layer",
    "activate",
    "forward",
    "forward_batch",
    "lipschitz_bound",
    "refine_n",
    "window_array",
    "restrict_n",
    "Generator",
]

PARAMS_VERSION = 1


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class CgnnConfig:
    latent_dim: int = 8
    channels: tuple = (4, 2, 1)
    first_scale: int = 2
    strides: tuple = (1, 1)  # nu_2 .. nu_L
    filter_length: int = 4  # pbar + 1
    support_halfwidth: int = 3
    activation: ActivationSpec = field(default_factory=ActivationSpec)
    wavelet: int = 6
    nonlinearity_mode: str = "coefficient"
    pointwise_depth: int = 6

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if isinstance(self.activation, dict):
            object.__setattr__(self, "activation", ActivationSpec.from_json(self.activation))
        L = len(self.channels)
        if L < 1:
            raise ShapeError("need at least one layer")
        if len(self.strides) != L - 1:
            raise ShapeError(f"{L} layers need {L - 1} strides, got {len(self.strides)}")
        if self.channels[-1] != 1:
            raise ShapeError("the last layer must have a single channel")
        for l in range(1, L):
            nu = self.strides[l - 1]
            cin, cout = self.channels[l - 1], self.channels[l]
            if nu < 1:
                raise ShapeError("strides must be >= 1")
            if cin % 2**nu:
                raise ShapeError(f"layer {l + 1}: {cin} channels not divisible by 2**{nu}")
            if cout * 2**nu < cin:
                raise ShapeError(f"layer {l + 1}: c_l = {cout} < c_(l-1) / 2**nu")
        if self.latent_dim < 1 or self.filter_length < 1 or self.support_halfwidth < 0:
            raise ShapeError("latent_dim, filter_length must be positive, support_halfwidth >= 0")
        if self.nonlinearity_mode not in ("coefficient", "pointwise"):
            raise ShapeError(f"unknown nonlinearity mode {self.nonlinearity_mode!r}")
        if self.nonlinearity_mode == "pointwise" and self.pointwise_depth < 1:
            raise ShapeError("pointwise mode needs depth >= 1")

    @property
    def num_layers(self) -> int:
        return len(self.channels)

    @property
    def scales(self) -> tuple:
        js = [self.first_scale]
        for nu in self.strides:
            js.append(js[-1] + nu)
        return tuple(js)

    @property
    def output_scale(self) -> int:
        return self.scales[-1]

    @property
    def fc_width(self) -> int:
        return 2 * self.support_halfwidth + 1

    def to_json(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "channels": list(self.channels),
            "first_scale": self.first_scale,
            "strides": list(self.strides),
            "filter_length": self.filter_length,
            "support_halfwidth": self.support_halfwidth,
            "activation": self.activation.to_json(),
            "wavelet": self.wavelet,
            "nonlinearity_mode": self.nonlinearity_mode,
            "pointwise_depth": self.pointwise_depth,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CgnnConfig":
        doc = dict(doc)
        doc["activation"] = ActivationSpec.from_json(doc.get("activation", {"kind": "leaky_relu"}))
        return cls(**doc)


@dataclass
class CgnnParams:
    """Trainable arrays. conv_filters[i] belongs to layer i + 2 and has shape
    (filter_length, c_(l-1), c_l); conv_biases[i] has shape (c_l,)."""

    fc_matrix: np.ndarray
    fc_bias: np.ndarray
    conv_filters: list
    conv_biases: list

    def arrays(self) -> list:
        return [self.fc_matrix, self.fc_bias, *self.conv_filters, *self.conv_biases]

    def copy(self) -> "CgnnParams":
        return CgnnParams(
            self.fc_matrix.copy(),
            self.fc_bias.copy(),
            [d.copy() for d in self.conv_filters],
            [b.copy() for b in self.conv_biases],
        )

    def validate(self, config: CgnnConfig):
        S, c1, w = config.latent_dim, config.channels[0], config.fc_width
        if self.fc_matrix.shape != (c1 * w, S):
            raise ShapeError(f"fc_matrix shape {self.fc_matrix.shape} != {(c1 * w, S)}")
        if self.fc_bias.shape != (c1 * w,):
            raise ShapeError(f"fc_bias shape {self.fc_bias.shape} != {(c1 * w,)}")
        if len(self.conv_filters) != config.num_layers - 1 or len(self.conv_biases) != config.num_layers - 1:
            raise ShapeError("one filter tensor and one bias per conv layer")
        for i, (d, b) in enumerate(zip(self.conv_filters, self.conv_biases)):
            want = (config.filter_length, config.channels[i], config.channels[i + 1])
            if d.shape != want:
                raise ShapeError(f"layer {i + 2} filter shape {d.shape} != {want}")
            if b.shape != (config.channels[i + 1],):
                raise ShapeError(f"layer {i + 2} bias shape {b.shape}")

    def to_json(self, config: CgnnConfig) -> dict:
        def enc(a):
            return {"shape": list(a.shape), "values": np.asarray(a).ravel().tolist()}

        return {
            "version": PARAMS_VERSION,
            "config": config.to_json(),
            "fc_matrix": enc(self.fc_matrix),
            "fc_bias": enc(self.fc_bias),
            "conv_filters": [enc(d) for d in self.conv_filters],
            "conv_biases": [enc(b) for b in self.conv_biases],
        }

    @staticmethod
    def from_json(doc: dict) -> tuple["CgnnParams", CgnnConfig]:
        if doc.get("version") != PARAMS_VERSION:
            raise ValueError(f"unsupported params version {doc.get('version')!r}")

        def dec(e):
            return np.asarray(e["values"], dtype=np.float64).reshape(e["shape"])

        config = CgnnConfig.from_json(doc["config"])
        params = CgnnParams(
            dec(doc["fc_matrix"]),
            dec(doc["fc_bias"]),
            [dec(e) for e in doc["conv_filters"]],
            [dec(e) for e in doc["conv_biases"]],
        )
        params.validate(config)
        return params, config

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in self.arrays():
            h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class ChannelSignal:
    """Several coefficient signals sharing scale and layout: coeffs[channel, i]."""

    scale: int
    offset: int
    coeffs: np.ndarray

    @property
    def layout(self) -> Layout:
        return Layout(self.offset, self.coeffs.shape[-1])

    @property
    def channels(self) -> int:
        return self.coeffs.shape[0]

    def channel(self, i: int) -> CoeffSignal:
        return CoeffSignal(self.scale, self.offset, self.coeffs[i])


def init_params(config: CgnnConfig, seed=0) -> CgnnParams:
    """Gaussian init with variance 1/fan_in; biases start at zero."""
    rng = np.random.default_rng(seed)
    S, c1, w = config.latent_dim, config.channels[0], config.fc_width
    F = rng.standard_normal((c1 * w, S)) / np.sqrt(S)
    filters, biases = [], []
    P = config.filter_length
    for cin, cout in zip(config.channels[:-1], config.channels[1:]):
        filters.append(rng.standard_normal((P, cin, cout)) / np.sqrt(P * cin))
        biases.append(np.zeros(cout))
    return CgnnParams(F, np.zeros(c1 * w), filters, biases)


# ---------------------------------------------------------------------------
# multi-level scale changes on batched arrays
# ---------------------------------------------------------------------------


def refine_n(x, layout: Layout, taps, M: int):
    """Apply M refinements along the last axis. Returns (array, layout)."""
    for _ in range(M):
        x = refine_array(x, taps)
        layout = refined_layout(layout, taps.size)
    return x, layout


def restrict_n(x, layout: Layout, taps, M: int):
    for _ in range(M):
        x, layout = restrict_array(x, layout, taps)
    return x, layout


def window_array(x, layout: Layout, target: Layout):
    """Re-express x (laid out on ``layout``) on ``target``; target must contain the support."""
    out = np.zeros(x.shape[:-1] + (target.length,))
    lo = max(layout.offset, target.offset)
    hi = min(layout.stop, target.stop)
    if hi > lo:
        out[..., lo - target.offset : hi - target.offset] = x[..., lo - layout.offset : hi - layout.offset]
    return out


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def _family(config: CgnnConfig) -> ScalingFamily:
    return scaling_family(config.wavelet)


def layer_layouts(config: CgnnConfig) -> list:
    """Layouts of every layer output (coefficient mode).

    Pointwise mode grows layouts further through refine/restrict unless the
    wavelet is Haar; those are tracked dynamically by the forward pass.
    """
    fam = _family(config)
    N = config.support_halfwidth
    out = [Layout(-N, 2 * N + 1)]
    for nu in config.strides:
        o, n = out[-1]
        e = fam.eta(nu)
        s = 2**nu
        out.append(Layout(s * o + e.r_min, s * (n - 1) + config.filter_length + e.values.size - 1))
    return out


def fully_connected(z, params: CgnnParams, config: CgnnConfig) -> ChannelSignal:
    """F z + b as c_1 channels of coefficients at offsets -N..N, scale j_1."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (config.latent_dim,):
        raise ShapeError(f"latent vector must have shape ({config.latent_dim},), got {z.shape}")
    h = params.fc_matrix @ z + params.fc_bias
    N = config.support_halfwidth
    return ChannelSignal(config.first_scale, -N, h.reshape(config.channels[0], 2 * N + 1))


def _conv_arrays(x, d, bias, nu, eta_values, scale_in):
    u = _kernels.upconv(x, d, 2**nu)
    B, cout, n = u.shape
    y = _kernels.conv_rows(u.reshape(B * cout, n), eta_values).reshape(B, cout, -1)
    y *= 2.0 ** (-scale_in / 2)
    return y + bias[None, :, None]


def conv_layer(x: ChannelSignal, l: int, params: CgnnParams, config: CgnnConfig, eta=None) -> ChannelSignal:
    """Layer l (2 <= l <= L): (Psi_l x)_k = sum_i x_i *_{j -> j + nu} t_{i,k} + b_k."""
    if not 2 <= l <= config.num_layers:
        raise ShapeError(f"conv layers are numbered 2..{config.num_layers}, got {l}")
    nu = config.strides[l - 2]
    if x.channels != config.channels[l - 2]:
        raise ShapeError(f"layer {l} expects {config.channels[l - 2]} channels, got {x.channels}")
    if x.scale != config.scales[l - 2]:
        raise ShapeError(f"layer {l} expects scale {config.scales[l - 2]}, got {x.scale}")
    eta = _family(config).eta(nu) if eta is None else eta
    if eta.nu != nu:
        raise ShapeError(f"eta has nu={eta.nu}, layer needs {nu}")
    y = _conv_arrays(x.coeffs[None], params.conv_filters[l - 2], params.conv_biases[l - 2], nu, eta.values, x.scale)
    return ChannelSignal(x.scale + nu, 2**nu * x.offset + eta.r_min, y[0])


def _activate_arrays(x, layout: Layout, scale: int, spec: ActivationSpec, config_mode, M, taps):
    if config_mode == "coefficient":
        return spec(x), layout
    fine, fl = refine_n(x, layout, taps, M)
    s = 2.0 ** ((scale + M) / 2)
    out = spec(s * fine) / s
    return restrict_n(out, fl, taps, M)


def activate(x: ChannelSignal, spec: ActivationSpec, mode: str = "coefficient", M: int = 6, wavelet: int = 1) -> ChannelSignal:
    """Apply sigma to coefficients, or to fine-scale point values then project back.

    In pointwise mode the coefficients are refined M times, rescaled to point
    values by 2**((j+M)/2), passed through sigma, scaled back and restricted
    M times. For Haar and a positively homogeneous sigma both modes agree.
    """
    taps = scaling_family(wavelet).taps
    y, layout = _activate_arrays(x.coeffs, x.layout, x.scale, spec, mode, M, taps)
    return ChannelSignal(x.scale, layout.offset, y)


class Generator:
    """Batched evaluation of a CGNN with cached eta tables."""

    def __init__(self, params: CgnnParams, config: CgnnConfig):
        params.validate(config)
        self.params = params
        self.config = config
        self.family = _family(config)
        self.etas = [self.family.eta(nu) for nu in config.strides]

    @property
    def taps(self):
        return self.family.taps

    def _act(self, x, layout, scale):
        c = self.config
        return _activate_arrays(x, layout, scale, c.activation, c.nonlinearity_mode, c.pointwise_depth, self.taps)

    def forward_batch(self, Z, record=None):
        """Z has shape (B, S). Returns (outputs (B, n), Layout).

        If ``record`` is a dict it receives the intermediates needed by the
        backward pass.
        """
        c, p = self.config, self.params
        Z = np.asarray(Z, dtype=np.float64)
        if Z.ndim != 2 or Z.shape[1] != c.latent_dim:
            raise ShapeError(f"latent batch must have shape (B, {c.latent_dim}), got {Z.shape}")
        N = c.support_halfwidth
        h = Z @ p.fc_matrix.T + p.fc_bias
        pre = h.reshape(Z.shape[0], c.channels[0], 2 * N + 1)
        layout = Layout(-N, 2 * N + 1)
        scales = c.scales
        pres, pre_layouts, conv_inputs, conv_layouts = [], [], [], []
        x, xl = self._act(pre, layout, scales[0])
        pres.append(pre)
        pre_layouts.append(layout)
        for i, nu in enumerate(c.strides):
            conv_inputs.append(x)
            conv_layouts.append(xl)
            eta = self.etas[i]
            pre = _conv_arrays(x, p.conv_filters[i], p.conv_biases[i], nu, eta.values, scales[i])
            layout = Layout(2**nu * xl.offset + eta.r_min, pre.shape[-1])
            x, xl = self._act(pre, layout, scales[i + 1])
            pres.append(pre)
            pre_layouts.append(layout)
        if record is not None:
            record.update(
                z=Z,
                pre_activations=pres,
                pre_layouts=pre_layouts,
                conv_inputs=conv_inputs,
                conv_layouts=conv_layouts,
                output_layout=xl,
            )
        return x[:, 0, :], xl

    def forward(self, z) -> CoeffSignal:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.config.latent_dim,):
            raise ShapeError(f"latent vector must have shape ({self.config.latent_dim},), got {z.shape}")
        y, layout = self.forward_batch(z[None])
        return CoeffSignal(self.config.output_scale, layout.offset, y[0])

    __call__ = forward


def forward_batch(Z, params: CgnnParams, config: CgnnConfig):
    return Generator(params, config).forward_batch(Z)


def forward(z, params: CgnnParams, config: CgnnConfig) -> CoeffSignal:
    return Generator(params, config).forward(z)


def _upconv_norm_bound(d, stride):
    """Upper bound on the l2 operator norm of x -> upconv(x, d, stride).

    Output phase r (positions = r mod stride) is a plain convolution of x with
    the taps p = r mod stride, bounded by the sum of their spectral norms.
    The phases are orthogonal, so their bounds add in quadrature.
    """
    P = d.shape[0]
    phases = [sum(np.linalg.norm(d[p], 2) for p in range(r, P, stride)) for r in range(min(stride, P))]
    return float(np.sqrt(np.sum(np.square(phases))))


def lipschitz_bound(params: CgnnParams, config: CgnnConfig) -> float:
    """Product of per-layer operator-norm bounds times Lipschitz constants of sigma."""
    fam = _family(config)
    lam = np.linalg.norm(params.fc_matrix, 2) * config.activation.lipschitz
    for i, nu in enumerate(config.strides):
        eta = fam.eta(nu)
        conv = 2.0 ** (-config.scales[i] / 2) * np.abs(eta.values).sum() * _upconv_norm_bound(params.conv_filters[i], 2**nu)
        lam *= conv * config.activation.lipschitz
    return float(lam)


def config_hash(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

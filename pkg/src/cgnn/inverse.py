"""Deblurring with a generative prior: blur operator, sample/coefficient maps,
Landweber iteration over the latent space and an empirical stability probe."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels
from .grad import backward, forward_tape
from .network import CgnnConfig, CgnnParams, Generator, window_array, layer_layouts, refine_n, restrict_n
from .signals import CoeffSignal, DiscreteSignal, Layout
from .wavelets import ScalingFilter, daubechies_filter, refined_layout, restricted_layout, scaling_family

log = logging.getLogger(__name__)

__all__ = [
    "BlurOperator",
    "gaussian_blur",
    "default_blur_taps",
    "apply_blur",
    "adjoint_blur",
    "synthesis_W",
    "analysis_Wt",
    "SignalFrame",
    "add_noise",
    "relative_mse",
    "LandweberTrace",
    "LandweberDiverged",
    "landweber_iterate",
    "landweber",
    "ToyGenerator",
    "toy_landweber",
    "ProbeResult",
    "lipschitz_probe",
    "generator_synthesizer",
]


# ---------------------------------------------------------------------------
# blur
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlurOperator:
    """Discrete convolution with a centred filter, cropped to the grid."""

    filter: DiscreteSignal
    grid_size: int
    variance: float = 0.0
    normalized: bool = True

    @property
    def taps(self) -> np.ndarray:
        return self.filter.values

    def __call__(self, x):
        return apply_blur(x, self)

    def adjoint(self, y):
        return adjoint_blur(y, self)

    def metadata(self) -> dict:
        return {
            "taps": int(self.taps.size),
            "variance": self.variance,
            "grid_size": self.grid_size,
            "normalization": "unit_sum" if self.normalized else "density",
        }


def default_blur_taps(grid_size: int) -> int:
    """1501 taps on a 4096 grid; fewer on coarser grids so the blur has the same physical width."""
    n = int(round(1501 * grid_size / 4096))
    return n if n % 2 else n + 1


def gaussian_blur(grid_size: int, variance: float = 4.0, taps: int | None = None, support=(-4.0, 4.0), normalize=True) -> BlurOperator:
    """Samples of the N(0, variance) density at ``taps`` equidistant points of ``support``."""
    taps = default_blur_taps(grid_size) if taps is None else int(taps)
    if taps < 1 or taps % 2 == 0:
        raise ValueError("number of taps must be odd and positive")
    if taps == 1 or variance == 0.0:
        values = np.ones(1)
    else:
        t = np.linspace(support[0], support[1], taps)
        values = np.exp(-0.5 * t * t / variance) / math.sqrt(2 * math.pi * variance)
        values = 0.5 * (values + values[::-1])  # exact symmetry
        if normalize:
            values = values / values.sum()
    half = (values.size - 1) // 2
    return BlurOperator(DiscreteSignal(-half, values), grid_size, variance, normalize)


def apply_blur(x, op: BlurOperator):
    """Full convolution cropped to the central ``grid_size`` samples. Accepts (n,) or (B, n)."""
    x = np.asarray(x, dtype=np.float64)
    X = x[None] if x.ndim == 1 else x
    if X.shape[-1] != op.grid_size:
        raise ValueError(f"signal length {X.shape[-1]} != grid size {op.grid_size}")
    full = _kernels.conv_rows(X, op.taps)
    half = (op.taps.size - 1) // 2
    out = full[:, half : half + op.grid_size]
    return out[0] if x.ndim == 1 else out


def adjoint_blur(y, op: BlurOperator):
    y = np.asarray(y, dtype=np.float64)
    Y = y[None] if y.ndim == 1 else y
    if Y.shape[-1] != op.grid_size:
        raise ValueError(f"signal length {Y.shape[-1]} != grid size {op.grid_size}")
    T = op.taps.size
    half = (T - 1) // 2
    padded = np.zeros((Y.shape[0], op.grid_size + T - 1))
    padded[:, half : half + op.grid_size] = Y
    out = _kernels.corr_rows(padded, op.taps)
    return out[0] if y.ndim == 1 else out


# ---------------------------------------------------------------------------
# coefficients <-> samples
# ---------------------------------------------------------------------------


def synthesis_W(c: CoeffSignal, M: int, filt: ScalingFilter) -> DiscreteSignal:
    """Point values on the grid 2**-(j+M) Z: M refinements scaled by 2**((j+M)/2)."""
    if M < 1:
        raise ValueError("M must be >= 1")
    fine, layout = refine_n(c.coeffs, c.layout, filt.taps, M)
    return DiscreteSignal(layout.offset, fine * 2.0 ** ((c.scale + M) / 2))


def analysis_Wt(x: DiscreteSignal, fine_scale: int, M: int, filt: ScalingFilter) -> CoeffSignal:
    """Coefficients at scale fine_scale - M from point values on 2**-fine_scale Z.

    This is the adjoint of synthesis_W for the grid inner product
    2**-fine_scale * sum_n x_n y_n, which approximates the L2 product.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    c, layout = restrict_n(x.values * 2.0 ** (-fine_scale / 2), x.layout, filt.taps, M)
    return CoeffSignal(fine_scale - M, layout.offset, c)


class SignalFrame:
    """Places grid data on [0, 1) inside the generator's output coefficient layout.

    Grid sample i sits at t = i / grid_size, i.e. at scale J = log2(grid_size).
    The generator outputs coefficients at scale J - M on a fixed layout; the
    data window is translated by ``shift`` coefficients so that it sits under
    the bulk of that layout.
    """

    def __init__(self, config: CgnnConfig, grid_size: int, M: int = 6):
        J = int(round(math.log2(grid_size)))
        if 2**J != grid_size:
            raise ValueError("grid size must be a power of two")
        if J - M != config.output_scale:
            raise ValueError(f"generator output scale {config.output_scale} != log2(grid) - M = {J - M}")
        self.grid_size = grid_size
        self.M = M
        self.fine_scale = J
        self.filter = daubechies_filter(config.wavelet)
        self.output_layout = layer_layouts(config)[-1]
        layout = Layout(0, grid_size)
        for _ in range(M):
            layout = restricted_layout(layout, self.filter.length)
        self.data_layout = layout
        self.shift = self._centre_shift(config)

    def _centre_shift(self, config: CgnnConfig) -> int:
        # nonnegative surrogate of the output energy: all-ones weights throughout
        prof = np.ones((1, 1, 2 * config.support_halfwidth + 1))
        for nu in config.strides:
            prof = _kernels.upconv(prof, np.ones((config.filter_length, 1, 1)), 2**nu)
            prof = _kernels.conv_rows(prof[0], np.abs(scaling_family(config.wavelet).eta(nu).values))[None]
        prof = prof[0, 0]
        idx = self.output_layout.offset + np.arange(prof.size)
        centre = float(np.dot(idx, prof) / prof.sum())
        data_centre = self.data_layout.offset + (self.data_layout.length - 1) / 2
        shift = int(round(centre - data_centre))
        lo = self.data_layout.offset + shift
        if lo < self.output_layout.offset or lo + self.data_layout.length > self.output_layout.stop:
            raise ValueError("generator output layout is too short to hold the data window")
        return shift

    @property
    def net_layout_in_data_frame(self) -> Layout:
        return Layout(self.output_layout.offset - self.shift, self.output_layout.length)

    def coeffs_from_samples(self, X):
        """(B, grid) samples -> (B, n_out) coefficients on the generator layout."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        c, layout = restrict_n(X * 2.0 ** (-self.fine_scale / 2), Layout(0, self.grid_size), self.filter.taps, self.M)
        return window_array(c, layout, self.net_layout_in_data_frame)

    def _synthesize(self, Y):
        fine, layout = refine_n(Y, self.net_layout_in_data_frame, self.filter.taps, self.M)
        return window_array(fine * 2.0 ** (self.fine_scale / 2), layout, Layout(0, self.grid_size))

    @cached_property
    def synthesis_matrix(self) -> np.ndarray:
        """Dense (grid, n_out) matrix of samples_from_coeffs."""
        W = self._synthesize(np.eye(self.output_layout.length)).T
        W.setflags(write=False)
        return W

    def samples_from_coeffs(self, Y):
        """(B, n_out) generator coefficients -> (B, grid) samples on [0, 1)."""
        Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
        return Y @ self.synthesis_matrix.T

    def samples_transpose(self, R):
        """Euclidean transpose of samples_from_coeffs."""
        R = np.atleast_2d(np.asarray(R, dtype=np.float64))
        return R @ self.synthesis_matrix

    def samples_transpose_direct(self, R):
        """samples_transpose evaluated by restriction instead of the dense matrix."""
        R = np.atleast_2d(np.asarray(R, dtype=np.float64))
        target = self.net_layout_in_data_frame
        fl = target
        for _ in range(self.M):
            fl = refined_layout(fl, self.filter.length)
        c, layout = restrict_n(window_array(R, Layout(0, self.grid_size), fl), fl, self.filter.taps, self.M)
        return window_array(c, layout, target) * 2.0 ** (self.fine_scale / 2)


# ---------------------------------------------------------------------------
# noise, metrics
# ---------------------------------------------------------------------------


def add_noise(y, tau: float, seed=0):
    """y + tau * standard Gaussian noise."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    y = np.asarray(y, dtype=np.float64)
    if tau == 0:
        return y.copy()
    return y + tau * np.random.default_rng(seed).standard_normal(y.shape)


def relative_mse(x_hat, x) -> float:
    return float(np.sum((np.asarray(x_hat) - x) ** 2) / np.sum(np.asarray(x) ** 2))


# ---------------------------------------------------------------------------
# Landweber
# ---------------------------------------------------------------------------


@dataclass
class LandweberTrace:
    iterates: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    recon_mse: list = field(default_factory=list)
    h: float = 0.0005
    seed: int | None = None
    stopped: str = ""

    @property
    def z(self) -> np.ndarray:
        return self.iterates[-1]

    @property
    def iterations(self) -> int:
        return len(self.iterates) - 1

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "residual", "mse"])
            for k, r in enumerate(self.residuals):
                mse = self.recon_mse[k] if k < len(self.recon_mse) else ""
                w.writerow([k, repr(float(r)), repr(float(mse)) if mse != "" else ""])

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "h": self.h,
            "seed": self.seed,
            "stopped": self.stopped,
            "initial_residual": float(self.residuals[0]) if self.residuals else None,
            "final_residual": float(self.residuals[-1]) if self.residuals else None,
            "final_recon_mse": float(self.recon_mse[-1]) if self.recon_mse else None,
            "z": np.asarray(self.z).tolist() if self.iterates else None,
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


class LandweberDiverged(FloatingPointError):
    def __init__(self, msg, trace: LandweberTrace):
        super().__init__(msg)
        self.trace = trace


def landweber_iterate(value_and_grad, z0, h=0.0005, max_iter=2000, stop_tol=1e-10, monitor=None, seed=None) -> LandweberTrace:
    """Gradient descent z_k = z_(k-1) - h grad F(z_(k-1)).

    ``value_and_grad(z)`` returns (residual norm, gradient, state); ``monitor(state)``
    optionally returns a reconstruction error logged per step. Stops when the
    relative residual decrease falls below ``stop_tol`` (None disables this).
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    trace = LandweberTrace(h=h, seed=seed)
    z = np.array(z0, dtype=np.float64)
    trace.stopped = "max_iter"
    for k in range(max_iter + 1):
        res, g, state = value_and_grad(z)
        trace.iterates.append(z.copy())
        trace.residuals.append(res)
        if monitor is not None:
            trace.recon_mse.append(monitor(state))
        if not np.isfinite(res) or not np.all(np.isfinite(g)):
            trace.stopped = "diverged"
            raise LandweberDiverged(f"non-finite residual at iteration {k}", trace)
        if k == max_iter:
            break
        if stop_tol is not None and k > 0:
            prev = trace.residuals[-2]
            if prev > 0 and (prev - res) / prev < stop_tol and prev >= res:
                trace.stopped = "stalled"
                break
        z = z - h * g
    return trace


def landweber(y, params: CgnnParams, config: CgnnConfig, blur: BlurOperator, frame: SignalFrame | None = None,
              z0=None, h=0.0005, max_iter=2000, stop_tol=1e-10, seed=0, x_true=None) -> LandweberTrace:
    """Minimise 1/2 || f * W G(z) - y ||^2 over z by Landweber iteration.

    W maps generator coefficients to grid samples. The gradient is
    G'(z)^T W^T f^T (f * W G(z) - y), evaluated with one reverse pass.
    z0 defaults to a standard Gaussian draw from ``seed``.
    """
    frame = SignalFrame(config, blur.grid_size) if frame is None else frame
    y = np.asarray(y, dtype=np.float64)
    if z0 is None:
        z0 = np.random.default_rng(seed).standard_normal(config.latent_dim)

    W = frame.synthesis_matrix
    AW = apply_blur(W.T, blur).T  # blurred synthesis, (grid, n_out)

    def value_and_grad(z):
        out, tape = forward_tape(z, params, config)
        r = AW @ out - y
        return float(np.linalg.norm(r)), backward(tape, AW.T @ r), out

    monitor = None if x_true is None else (lambda out: relative_mse(W @ out, x_true))
    trace = landweber_iterate(value_and_grad, z0, h, max_iter, stop_tol, monitor, seed)
    log.info("landweber: %d iterations, residual %.3e -> %.3e (%s)", trace.iterations,
             trace.residuals[0], trace.residuals[-1], trace.stopped)
    return trace


class ToyGenerator:
    """G(z) = relu(-relu(z) + 1): not injective, flat for z <= 0 and z >= 1."""

    def __call__(self, z):
        z = np.asarray(z, dtype=np.float64)
        return np.maximum(-np.maximum(z, 0.0) + 1.0, 0.0)

    def vjp(self, z, g):
        z = np.asarray(z, dtype=np.float64)
        inner = np.where(z > 0, 1.0, 0.0)
        outer = np.where(-np.maximum(z, 0.0) + 1.0 > 0, 1.0, 0.0)
        return g * outer * (-1.0) * inner


def toy_landweber(y, z0, h=0.0005, max_iter=100, operator_scale=1.0) -> LandweberTrace:
    """Landweber on F(z) = operator_scale * G(z) with the toy generator."""
    G = ToyGenerator()
    a = float(operator_scale)

    def value_and_grad(z):
        r = a * G(z) - y
        return float(np.linalg.norm(r)), G.vjp(z, a * r), None

    return landweber_iterate(value_and_grad, z0, h, max_iter, stop_tol=None)


# ---------------------------------------------------------------------------
# stability probe
# ---------------------------------------------------------------------------


@dataclass
class ProbeResult:
    ratios: np.ndarray
    skipped: int

    @property
    def max(self) -> float:
        return float(self.ratios.max()) if self.ratios.size else float("nan")

    def quantiles(self, qs=(0.5, 0.9, 0.99)) -> dict:
        return {str(q): float(np.quantile(self.ratios, q)) for q in qs}


def _ball(rng, n, dim, radius):
    v = rng.standard_normal((n, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius * rng.random((n, 1)) ** (1.0 / dim)


def lipschitz_probe(synthesize, operator, latent_dim: int, n_pairs: int = 500, seed=0, radius=3.0) -> ProbeResult:
    """Ratios ||x1 - x2|| / ||F x1 - F x2|| for x = synthesize(z), z in a latent ball.

    ``synthesize`` maps (B, S) latents to (B, n) signals and ``operator`` maps
    (B, n) to (B, m). Pairs with identical signals are skipped.
    """
    rng = np.random.default_rng(seed)
    Z1 = _ball(rng, n_pairs, latent_dim, radius)
    Z2 = _ball(rng, n_pairs, latent_dim, radius)
    X1, X2 = synthesize(Z1), synthesize(Z2)
    num = np.linalg.norm(X1 - X2, axis=1)
    den = np.linalg.norm(operator(X1) - operator(X2), axis=1)
    keep = num > 0
    return ProbeResult(num[keep] / den[keep], int((~keep).sum()))


def generator_synthesizer(params: CgnnParams, config: CgnnConfig, frame: SignalFrame):
    gen = Generator(params, config)

    def synth(Z):
        y, _ = gen.forward_batch(Z)
        return frame.samples_from_coeffs(y)

    return synth

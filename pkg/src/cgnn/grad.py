"""Reverse-mode derivatives of the generator and a finite-difference checker."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .network import CgnnParams, Generator, ShapeError, refine_n, restrict_n, window_array
from .signals import Layout

__all__ = ["Tape", "ParamGrads", "forward_tape", "backward", "jvp", "grad_check", "min_abs_preactivation", "kink_distance"]


@dataclass(frozen=True)
class Tape:
    """Intermediates of one batched forward pass.

    ``pre_activations`` holds the L activation inputs, ``conv_inputs`` the
    L - 1 conv-layer inputs.
    """

    generator: Generator
    z: np.ndarray
    pre_activations: tuple
    pre_layouts: tuple
    conv_inputs: tuple
    conv_layouts: tuple
    output: np.ndarray
    output_layout: Layout

    @property
    def size(self) -> int:
        return len(self.pre_activations) + len(self.conv_inputs)

    @property
    def batch(self) -> int:
        return self.z.shape[0]

    def replay(self):
        return self.generator.forward_batch(self.z)


@dataclass
class ParamGrads:
    fc_matrix: np.ndarray
    fc_bias: np.ndarray
    conv_filters: list
    conv_biases: list

    def arrays(self) -> list:
        return [self.fc_matrix, self.fc_bias, *self.conv_filters, *self.conv_biases]

    def as_params(self) -> CgnnParams:
        return CgnnParams(self.fc_matrix, self.fc_bias, self.conv_filters, self.conv_biases)


def forward_tape(z, params, config) -> tuple:
    """Forward pass recording a Tape. ``z`` may be (S,) or (B, S).

    Returns (output, tape); the output has the same leading shape as z.
    """
    gen = Generator(params, config)
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    Z = z[None] if single else z
    rec: dict = {}
    y, layout = gen.forward_batch(Z, record=rec)
    tape = Tape(
        gen,
        Z,
        tuple(rec["pre_activations"]),
        tuple(rec["pre_layouts"]),
        tuple(rec["conv_inputs"]),
        tuple(rec["conv_layouts"]),
        y,
        layout,
    )
    return (y[0] if single else y), tape


def _act_vjp(gen: Generator, g, pre, layout: Layout, out_layout: Layout, scale: int):
    c = gen.config
    spec = c.activation
    if c.nonlinearity_mode == "coefficient":
        return g * spec.derivative(pre)
    # a = R^M (sigma(s U^M x) / s)  =>  x-bar = R^M [sigma'(s U^M x) * U^M a-bar]
    M, taps = c.pointwise_depth, gen.taps
    fine, fl = refine_n(pre, layout, taps, M)
    s = 2.0 ** ((scale + M) / 2)
    up, ul = refine_n(g, out_layout, taps, M)
    up = window_array(up, ul, fl)
    back, bl = restrict_n(spec.derivative(s * fine) * up, fl, taps, M)
    return window_array(back, bl, layout)


def _act_jvp(gen: Generator, v, pre, layout: Layout, scale: int):
    c = gen.config
    spec = c.activation
    if c.nonlinearity_mode == "coefficient":
        return v * spec.derivative(pre)
    M, taps = c.pointwise_depth, gen.taps
    fine, fl = refine_n(pre, layout, taps, M)
    vf, _ = refine_n(v, layout, taps, M)
    s = 2.0 ** ((scale + M) / 2)
    out, _ = restrict_n(spec.derivative(s * fine) * vf, fl, taps, M)
    return out


def _act_out_layouts(tape: Tape):
    # activation outputs: conv inputs for layers 1..L-1, output for layer L
    return list(tape.conv_layouts) + [tape.output_layout]


def backward(tape: Tape, cotangent, param_grads: bool = False):
    """Transposed Jacobian of the generator applied to ``cotangent``.

    ``cotangent`` lives on the output layout: shape (n,) for a single latent
    vector or (B, n) for a batch. Returns the latent gradient with the shape
    of the recorded z, and a ParamGrads (summed over the batch) when asked.
    """
    gen = tape.generator
    c, p = gen.config, gen.params
    g = np.asarray(cotangent, dtype=np.float64)
    single = g.ndim == 1
    G = g[None] if single else g
    if G.shape != tape.output.shape:
        raise ShapeError(f"cotangent shape {g.shape} does not match output {tape.output.shape}")
    G = G[:, None, :]
    out_layouts = _act_out_layouts(tape)
    scales = c.scales
    gfilters, gbiases = [None] * len(c.strides), [None] * len(c.strides)
    for i in range(c.num_layers - 1, 0, -1):
        G = _act_vjp(gen, G, tape.pre_activations[i], tape.pre_layouts[i], out_layouts[i], scales[i])
        nu = c.strides[i - 1]
        eta = gen.etas[i - 1].values
        x = tape.conv_inputs[i - 1]
        d = p.conv_filters[i - 1]
        B, cout, ny = G.shape
        if param_grads:
            gbiases[i - 1] = G.sum(axis=(0, 2))
        gu = _kernels.corr_rows(G.reshape(B * cout, ny), eta).reshape(B, cout, -1)
        gu *= 2.0 ** (-scales[i - 1] / 2)
        if param_grads:
            gfilters[i - 1] = _kernels.upconv_weight_grad(x, gu, 2**nu, d.shape[0])
        G = _kernels.upconv_adjoint(gu, d, 2**nu, x.shape[-1])
    G = _act_vjp(gen, G, tape.pre_activations[0], tape.pre_layouts[0], out_layouts[0], scales[0])
    gh = G.reshape(G.shape[0], -1)
    gz = gh @ p.fc_matrix
    gz = gz[0] if single else gz
    if not param_grads:
        return gz
    grads = ParamGrads(gh.T @ tape.z, gh.sum(axis=0), gfilters, gbiases)
    return gz, grads


def _jvp_pass(tape: Tape, V: np.ndarray):
    """Push tangents V (B, S) through the recorded point; returns (output, pre-activation tangents)."""
    gen = tape.generator
    c, p = gen.config, gen.params
    N = c.support_halfwidth
    dh = (V @ p.fc_matrix.T).reshape(V.shape[0], c.channels[0], 2 * N + 1)
    scales = c.scales
    pres = [dh]
    dx = _act_jvp(gen, dh, tape.pre_activations[0], tape.pre_layouts[0], scales[0])
    for i, nu in enumerate(c.strides):
        u = _kernels.upconv(dx, p.conv_filters[i], 2**nu)
        B, cout, n = u.shape
        dy = _kernels.conv_rows(u.reshape(B * cout, n), gen.etas[i].values).reshape(B, cout, -1)
        dy *= 2.0 ** (-scales[i] / 2)
        pres.append(dy)
        dx = _act_jvp(gen, dy, tape.pre_activations[i + 1], tape.pre_layouts[i + 1], scales[i + 1])
    return dx[:, 0, :], pres


def jvp(tape: Tape, v):
    """Jacobian of the generator (w.r.t. z) applied to ``v`` at the recorded point."""
    v = np.asarray(v, dtype=np.float64)
    single = v.ndim == 1
    out, _ = _jvp_pass(tape, v[None] if single else v)
    return out[0] if single else out


def kink_distance(tape: Tape) -> float:
    """Smallest latent-space distance to a sign change of any activation input, to first order.

    Each pre-activation a_i(z) is compared with the norm of its gradient:
    |a_i| / |grad a_i|. Entries that are identically zero near z are skipped.
    Only meaningful for a tape recorded at a single latent vector.
    """
    if tape.batch != 1:
        raise ShapeError("kink_distance needs a tape recorded at one latent vector")
    S = tape.z.shape[1]
    _, tangents = _jvp_pass(tape, np.eye(S))
    best = np.inf
    for a, t in zip(tape.pre_activations, tangents):
        gnorm = np.sqrt((t**2).sum(axis=0))
        mag = np.abs(a[0])
        live = gnorm > 0
        if live.any():
            best = min(best, float((mag[live] / gnorm[live]).min()))
    return best


def min_abs_preactivation(tape: Tape) -> float:
    """Distance of the recorded point from the nearest activation kink (coefficient mode).

    Exact zeros are skipped: they sit in the structurally empty border of the
    layout and do not move under small perturbations of z.
    """
    vals = [np.abs(a[a != 0.0]) for a in tape.pre_activations]
    vals = [v for v in vals if v.size]
    return float(min(v.min() for v in vals)) if vals else float("inf")


def grad_check(objective, gradient, z0, eps: float = 1e-6) -> float:
    """Central-difference check of ``gradient`` against ``objective`` at z0.

    Returns max_i |fd_i - g_i| / max(max_i |fd_i|, max_i |g_i|).
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-7, 1e-4]")
    z0 = np.asarray(z0, dtype=np.float64)
    an = np.asarray(gradient(z0), dtype=np.float64)
    fd = np.empty_like(z0)
    for i in range(z0.size):
        e = np.zeros_like(z0)
        e.flat[i] = eps
        fd.flat[i] = (objective(z0 + e) - objective(z0 - e)) / (2 * eps)
    scale = max(np.abs(fd).max(), np.abs(an).max())
    if scale == 0.0:
        return 0.0
    return float(np.abs(fd - an).max() / scale)

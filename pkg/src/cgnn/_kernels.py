"""Hot loops for strided (transposed) convolutions over batched channels.

Every convolution in the package reduces to one kernel family acting on
arrays ``x[batch, c_in, n]`` and filters ``w[tap, c_in, c_out]``:

* ``upconv``             y[b, k, s*m + p] += x[b, i, m] * w[p, i, k]
* ``upconv_adjoint``     its exact transpose (a strided correlation)
* ``upconv_weight_grad`` the bilinear partner, d<y, g>/dw

The numba versions are used when numba imports and ``CGNN_DISABLE_NUMBA``
is unset or "0". Both implementations are always importable under explicit
names so they can be benchmarked and cross-checked against each other.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "BACKEND",
    "upconv",
    "upconv_adjoint",
    "upconv_weight_grad",
    "conv_rows",
    "corr_rows",
    "numpy_upconv",
    "numpy_upconv_adjoint",
    "numpy_upconv_weight_grad",
    "numpy_conv_rows",
    "numpy_corr_rows",
]


def _numba_requested() -> bool:
    flag = os.environ.get("CGNN_DISABLE_NUMBA", "").strip().lower()
    return flag in ("", "0", "false", "no")


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------


def numpy_upconv(x: np.ndarray, w: np.ndarray, stride: int) -> np.ndarray:
    B, cin, n = x.shape
    P, _, cout = w.shape
    out = np.zeros((B, cout, stride * (n - 1) + P))
    stop = stride * (n - 1) + 1
    for p in range(P):
        out[:, :, p : p + stop : stride] += np.einsum("bin,ik->bkn", x, w[p])
    return out


def numpy_upconv_adjoint(g: np.ndarray, w: np.ndarray, stride: int, n: int) -> np.ndarray:
    B = g.shape[0]
    P, cin, _ = w.shape
    out = np.zeros((B, cin, n))
    stop = stride * (n - 1) + 1
    for p in range(P):
        out += np.einsum("bkn,ik->bin", g[:, :, p : p + stop : stride], w[p])
    return out


def numpy_upconv_weight_grad(x: np.ndarray, g: np.ndarray, stride: int, P: int) -> np.ndarray:
    n = x.shape[2]
    stop = stride * (n - 1) + 1
    gw = np.empty((P, x.shape[1], g.shape[1]))
    for p in range(P):
        gw[p] = np.einsum("bin,bkn->ik", x, g[:, :, p : p + stop : stride])
    return gw


def numpy_conv_rows(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Full convolution of every row of a 2-D array with one filter."""
    out = np.empty((x.shape[0], x.shape[1] + f.shape[0] - 1))
    for r in range(x.shape[0]):
        out[r] = np.convolve(x[r], f)
    return out


def numpy_corr_rows(g: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Adjoint of ``numpy_conv_rows``: valid correlation, row length shrinks by len(f)-1."""
    out = np.empty((g.shape[0], g.shape[1] - f.shape[0] + 1))
    for r in range(g.shape[0]):
        out[r] = np.correlate(g[r], f, mode="valid")
    return out


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

numba_upconv = numba_upconv_adjoint = numba_upconv_weight_grad = None
numba_conv_rows = numba_corr_rows = None

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is an optional accelerator
    njit = None

if njit is not None:

    @njit(cache=True)
    def numba_upconv(x, w, stride):
        B, cin, n = x.shape
        P, _, cout = w.shape
        out = np.zeros((B, cout, stride * (n - 1) + P))
        for b in range(B):
            for i in range(cin):
                for m in range(n):
                    xv = x[b, i, m]
                    if xv == 0.0:
                        continue
                    base = stride * m
                    for p in range(P):
                        for k in range(cout):
                            out[b, k, base + p] += xv * w[p, i, k]
        return out

    @njit(cache=True)
    def numba_upconv_adjoint(g, w, stride, n):
        B = g.shape[0]
        P, cin, cout = w.shape
        out = np.zeros((B, cin, n))
        for b in range(B):
            for i in range(cin):
                for m in range(n):
                    base = stride * m
                    acc = 0.0
                    for p in range(P):
                        for k in range(cout):
                            acc += g[b, k, base + p] * w[p, i, k]
                    out[b, i, m] = acc
        return out

    @njit(cache=True)
    def numba_upconv_weight_grad(x, g, stride, P):
        B, cin, n = x.shape
        cout = g.shape[1]
        gw = np.zeros((P, cin, cout))
        for b in range(B):
            for i in range(cin):
                for m in range(n):
                    xv = x[b, i, m]
                    if xv == 0.0:
                        continue
                    base = stride * m
                    for p in range(P):
                        for k in range(cout):
                            gw[p, i, k] += xv * g[b, k, base + p]
        return gw

    # row kernels loop over taps outside so the inner loop is a contiguous axpy that LLVM vectorises

    @njit(cache=True)
    def numba_conv_rows(x, f):
        R, n = x.shape
        P = f.shape[0]
        out = np.zeros((R, n + P - 1))
        for r in range(R):
            for p in range(P):
                fp = f[p]
                for m in range(n):
                    out[r, m + p] += x[r, m] * fp
        return out

    @njit(cache=True)
    def numba_corr_rows(g, f):
        R, ng = g.shape
        P = f.shape[0]
        n = ng - P + 1
        out = np.zeros((R, n))
        for r in range(R):
            for p in range(P):
                fp = f[p]
                for m in range(n):
                    out[r, m] += g[r, m + p] * fp
        return out

if njit is not None and _numba_requested():
    BACKEND = "numba"
    _upconv, _upconv_adjoint, _upconv_weight_grad = (
        numba_upconv,
        numba_upconv_adjoint,
        numba_upconv_weight_grad,
    )
    _conv_rows, _corr_rows = numba_conv_rows, numba_corr_rows
else:
    BACKEND = "numpy"
    _upconv, _upconv_adjoint, _upconv_weight_grad = (
        numpy_upconv,
        numpy_upconv_adjoint,
        numpy_upconv_weight_grad,
    )
    _conv_rows, _corr_rows = numpy_conv_rows, numpy_corr_rows


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def upconv(x, w, stride=1):
    """Batched multichannel transposed convolution.

    ``x`` has shape (B, c_in, n), ``w`` shape (P, c_in, c_out); the result has
    shape (B, c_out, stride*(n-1) + P). With B = c_in = c_out = 1 and
    stride 1 this is ordinary full convolution.
    """
    return _upconv(_f64(x), _f64(w), int(stride))


def upconv_adjoint(g, w, stride, n):
    """Transpose of :func:`upconv` for an input of length ``n``."""
    g = _f64(g)
    need = stride * (n - 1) + w.shape[0]
    if g.shape[2] != need:
        raise ValueError(f"cotangent length {g.shape[2]} != expected {need}")
    return _upconv_adjoint(g, _f64(w), int(stride), int(n))


def upconv_weight_grad(x, g, stride, P):
    """Gradient of <upconv(x, w, stride), g> with respect to ``w``."""
    return _upconv_weight_grad(_f64(x), _f64(g), int(stride), int(P))


def conv_rows(x, f):
    return _conv_rows(_f64(x), _f64(f))


def corr_rows(g, f):
    return _corr_rows(_f64(g), _f64(f))

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cgnn import _kernels as K

needs_numba = pytest.mark.skipif(K.numba_upconv is None, reason="numba not installed")


def _arrays(seed, B, cin, cout, n, P):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((B, cin, n)), rng.standard_normal((P, cin, cout))


shapes = st.tuples(
    st.integers(0, 2**31),
    st.integers(1, 3),
    st.integers(1, 4),
    st.integers(1, 4),
    st.integers(1, 9),
    st.integers(1, 6),
    st.sampled_from([1, 2, 4]),
)


@given(shapes)
def test_upconv_transpose_identity(case):
    seed, B, cin, cout, n, P, s = case
    x, w = _arrays(seed, B, cin, cout, n, P)
    y = K.upconv(x, w, s)
    assert y.shape == (B, cout, s * (n - 1) + P)
    g = np.random.default_rng(seed + 1).standard_normal(y.shape)
    lhs = np.sum(y * g)
    rhs = np.sum(x * K.upconv_adjoint(g, w, s, n))
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))
    gw = K.upconv_weight_grad(x, g, s, P)
    assert abs(np.sum(gw * w) - lhs) <= 1e-12 * (1 + abs(lhs))


def test_upconv_single_channel_is_convolution():
    x, w = np.array([1.0, 2.0, -1.0]), np.array([0.5, 1.0, 3.0])
    y = K.upconv(x[None, None], w[:, None, None], 1)[0, 0]
    assert np.allclose(y, np.convolve(x, w))


def test_upconv_stride_inserts_zeros():
    x, w = np.array([1.0, 2.0]), np.array([1.0, 10.0])
    y = K.upconv(x[None, None], w[:, None, None], 3)[0, 0]
    assert np.allclose(y, [1.0, 10.0, 0.0, 2.0, 20.0])


def test_adjoint_rejects_wrong_length():
    x, w = _arrays(0, 1, 1, 1, 4, 3)
    with pytest.raises(ValueError):
        K.upconv_adjoint(np.zeros((1, 1, 5)), w, 1, 4)


@given(st.integers(0, 2**31), st.integers(1, 5), st.integers(1, 30), st.integers(1, 8))
def test_rows_conv_and_corr_are_adjoint(seed, R, n, P):
    rng = np.random.default_rng(seed)
    x, f = rng.standard_normal((R, n)), rng.standard_normal(P)
    y = K.conv_rows(x, f)
    assert np.allclose(y[0], np.convolve(x[0], f))
    g = rng.standard_normal(y.shape)
    assert np.isclose(np.sum(y * g), np.sum(x * K.corr_rows(g, f)))


@needs_numba
@given(shapes)
def test_numba_matches_numpy(case):
    seed, B, cin, cout, n, P, s = case
    x, w = _arrays(seed, B, cin, cout, n, P)
    y = K.numpy_upconv(x, w, s)
    assert np.allclose(K.numba_upconv(x, w, s), y, rtol=0, atol=1e-12)
    assert np.allclose(K.numba_upconv_adjoint(y, w, s, n), K.numpy_upconv_adjoint(y, w, s, n), rtol=0, atol=1e-11)
    assert np.allclose(K.numba_upconv_weight_grad(x, y, s, P), K.numpy_upconv_weight_grad(x, y, s, P), rtol=0, atol=1e-11)
    rows = x.reshape(-1, n)
    f = w[:, 0, 0]
    assert np.allclose(K.numba_conv_rows(rows, f), K.numpy_conv_rows(rows, f), rtol=0, atol=1e-12)
    assert np.allclose(K.numba_corr_rows(y.reshape(-1, y.shape[-1]), f), K.numpy_corr_rows(y.reshape(-1, y.shape[-1]), f),
                       rtol=0, atol=1e-12)


@pytest.mark.parametrize("flag,expect", [("1", "numpy"), ("0", None)])
def test_environment_flag_selects_backend(flag, expect):
    env = dict(os.environ, CGNN_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from cgnn import _kernels; print(_kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True).stdout.strip()
    if expect is None:
        expect = "numba" if K.numba_upconv is not None else "numpy"
    assert out == expect


def test_generator_output_is_backend_independent():
    # the whole forward pass under the numpy fallback agrees with the default backend
    code = (
        "import numpy as np\n"
        "from cgnn.network import CgnnConfig, init_params, forward_batch\n"
        "c = CgnnConfig(); p = init_params(c, 3)\n"
        "y, _ = forward_batch(np.random.default_rng(0).standard_normal((4, 8)), p, c)\n"
        "print(repr(y.ravel().tolist()))\n"
    )
    outs = []
    for flag in ("1", "0"):
        env = dict(os.environ, CGNN_DISABLE_NUMBA=flag)
        outs.append(np.array(eval(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                                                 text=True, check=True).stdout)))
    assert np.allclose(outs[0], outs[1], rtol=0, atol=1e-12)

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import cascade_cells, daubechies_by_factorisation, dense_refine, eta_by_midpoints

from cgnn.signals import CoeffSignal, Layout
from cgnn.wavelets import (
    EtaSequence,
    ScalingFilter,
    UnsupportedOrder,
    cascade_evaluate,
    daubechies_filter,
    eta,
    pointwise_values,
    refine,
    refine_array,
    refined_layout,
    restrict,
    restrict_array,
    restricted_layout,
    scaling_family,
)

# eta_1 for db2 at K = 10, r = -2 .. 8, from the midpoint oracle
DB2_ETA1 = [
    0.000248342250852, -0.011630223871504, 0.099266844455236, 0.464220326151363, 0.483568036064183,
    0.039570173143061, -0.082851614464379, 0.00779768992134, -0.00023184916346, 4.2034655742e-05, 2.40857571e-07,
]

orders = st.integers(1, 10)


@pytest.mark.parametrize("N", range(1, 11))
def test_taps_match_spectral_factorisation(N):
    assert np.allclose(daubechies_filter(N).taps, daubechies_by_factorisation(N), rtol=0, atol=1e-12)


@pytest.mark.parametrize("N", range(1, 11))
def test_taps_satisfy_moment_conditions(N):
    h = daubechies_filter(N).taps
    k = np.arange(h.size)
    alt = (-1.0) ** k
    # the highpass partner annihilates polynomials of degree < N
    for p in range(N):
        assert abs(np.sum(alt * h * k**p)) < 1e-8 * max(1.0, float(k.max()) ** p)
    assert daubechies_filter(N).orthonormality_defect() < 1e-13


def test_known_db2_taps():
    s3 = np.sqrt(3)
    ref = np.array([1 + s3, 3 + s3, 3 - s3, 1 - s3]) / (4 * np.sqrt(2))
    assert np.allclose(daubechies_filter(2).taps, ref, atol=1e-15)


@pytest.mark.parametrize("N", [0, 11, -1])
def test_unsupported_order(N):
    with pytest.raises(UnsupportedOrder):
        daubechies_filter(N)


def test_filter_validation_and_json():
    with pytest.raises(ValueError):
        ScalingFilter(1, [1.0, 0.5])
    with pytest.raises(ValueError):
        ScalingFilter(2, [1.0, 1.0, 0.0, 0.0])
    f = daubechies_filter(3)
    assert np.array_equal(ScalingFilter.from_json(json.loads(json.dumps(f.to_json()))).taps, f.taps)
    assert f.support == (0, 5) and f.length == 6


def test_layouts():
    assert refined_layout(Layout(-3, 7), 12) == Layout(-6, 2 * 6 + 12)
    assert restricted_layout(Layout(0, 1024), 12) == Layout(-5, 517)
    lay = Layout(0, 1024)
    for _ in range(6):
        lay = restricted_layout(lay, 12)
    assert lay == Layout(-10, 26)


@given(orders, st.integers(1, 30), st.integers(0, 2**31))
def test_refine_matches_dense_matrix(N, n, seed):
    taps = daubechies_filter(N).taps
    c = np.random.default_rng(seed).standard_normal(n)
    assert np.allclose(refine_array(c[None], taps)[0], dense_refine(n, taps) @ c)


@given(orders, st.integers(-5, 5), st.integers(1, 30), st.integers(0, 2**31))
def test_restrict_is_transpose_of_refine(N, off, n, seed):
    taps = daubechies_filter(N).taps
    R = dense_refine(n, taps)
    g = np.random.default_rng(seed).standard_normal(R.shape[0])
    fine = refined_layout(Layout(off, n), taps.size)
    out, lay = restrict_array(g[None], fine, taps)
    dense = R.T @ g
    # the restricted layout covers the input window; everything outside it is zero in R^T g
    i0 = off - lay.offset
    assert np.allclose(out[0][i0 : i0 + n], dense)


@given(orders, st.integers(-3, 3), st.integers(-10, 10), st.integers(1, 25), st.integers(0, 2**31))
def test_restrict_after_refine_is_identity(N, j, off, n, seed):
    f = daubechies_filter(N)
    c = CoeffSignal(j, off, np.random.default_rng(seed).standard_normal(n))
    up = refine(c, f)
    assert up.scale == j + 1
    assert np.isclose(up.norm(), c.norm())  # refinement is an isometry
    assert restrict(up, f).allclose(c, atol=1e-12)


@given(orders, st.integers(1, 20), st.integers(0, 2**31))
def test_refine_then_restrict_projects(N, n, seed):
    # restrict is a contraction and refine o restrict is an orthogonal projection
    f = daubechies_filter(N)
    d = CoeffSignal(1, 0, np.random.default_rng(seed).standard_normal(n))
    r = restrict(d, f)
    assert r.norm() <= d.norm() + 1e-12
    p = refine(r, f)
    assert restrict(refine(restrict(p, f), f), f).allclose(r, atol=1e-12)


@pytest.mark.parametrize("N", [1, 2, 4, 6, 10])
def test_cascade_table(N):
    t = cascade_evaluate(daubechies_filter(N), 10)
    assert t.samples.size == (2 * N - 1) * 2**10 + 1 and t.samples[-1] == 0.0
    assert abs(t.integral() - 1.0) < 1e-12
    # partition of unity: sum_n phi(x - n) = 1 on every cell
    folded = t.cells.reshape(2 * N - 1, 2**10).sum(axis=0)
    assert np.allclose(folded, 1.0, atol=1e-10)
    ref = cascade_cells(daubechies_by_factorisation(N), 10)
    assert np.allclose(t.cells[: ref.size], ref, atol=1e-12)
    assert np.allclose(t(t.grid[:-1] + 0.5 * t.step), t.cells)
    assert t(np.array([-0.1, 2 * N]))[0] == 0.0


def test_cascade_rejects_bad_resolution():
    with pytest.raises(ValueError):
        cascade_evaluate(daubechies_filter(2), 0)


def test_haar_eta_values():
    e = eta(daubechies_filter(1), 1)
    assert e.support_range == (0, 2)
    assert np.allclose(e.values, [0.25, 0.5, 0.25], atol=1e-15)


def test_db2_eta_frozen():
    e = eta(daubechies_filter(2), 1, K=10)
    assert e.r_min == -2
    assert np.allclose(e.values, DB2_ETA1, rtol=0, atol=1e-13)


@pytest.mark.parametrize("N,nu", [(1, 2), (2, 2), (3, 1), (5, 2), (6, 1), (10, 1)])
def test_eta_matches_midpoint_oracle(N, nu):
    r0, ref = eta_by_midpoints(daubechies_by_factorisation(N), nu, 9)
    e = eta(daubechies_filter(N), nu, K=9)
    assert e.r_min == r0 == -(2 * N - 1) + 1
    assert np.allclose(e.values, ref, atol=1e-12)


@pytest.mark.parametrize("N", [2, 6, 10])
def test_eta_converges_in_K(N):
    f = daubechies_filter(N)
    d = [np.abs(eta(f, 1, K + 2).values - eta(f, 1, K).values).max() for K in (6, 8)]
    assert d[1] < 0.5 * d[0]


@given(orders, st.integers(1, 3))
def test_eta_sums_to_one(N, nu):
    # sum_r eta(r) = (int phi)^3 in the limit; every cascade iterate preserves it exactly
    assert abs(eta(daubechies_filter(N), nu, K=8).values.sum() - 1.0) < 1e-12


def test_eta_argument_checks_and_json():
    with pytest.raises(ValueError):
        eta(daubechies_filter(2), 0)
    with pytest.raises(ValueError):
        eta(daubechies_filter(2), 3, K=2)
    e = eta(daubechies_filter(2), 1, K=6)
    back = EtaSequence.from_json(json.loads(json.dumps(e.to_json())))
    assert back.r_min == e.r_min and np.array_equal(back.values, e.values)
    assert e(100) == 0.0 and EtaSequence.dirac()(0) == 1.0


def test_scaling_family_caches_and_exports():
    fam = scaling_family(2)
    assert fam.eta(1) is fam.eta(1)
    assert scaling_family(2) is fam
    doc = json.loads(fam.export_json((1, 2)))
    assert doc["filter"]["N"] == 2 and [e["nu"] for e in doc["eta"]] == [1, 2]


def test_pointwise_values_of_a_constant():
    # all-ones coefficients at scale 0 give the constant 1 away from the ends
    j, n = 0, 80
    sig = CoeffSignal(j, -40, np.ones(n))
    b, v = pointwise_values(sig, 3, daubechies_filter(3))
    assert np.allclose(np.diff(b), 2.0**-3)
    mid = np.abs(b) < 10
    assert np.allclose(v[mid], 1.0, atol=1e-10)
    with pytest.raises(ValueError):
        pointwise_values(sig, 0, daubechies_filter(3))

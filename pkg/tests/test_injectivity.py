import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cgnn.activations import ActivationSpec
from cgnn.injectivity import (
    SizeGuardExceeded,
    activation_mode_for,
    block_banded,
    build_Dl,
    build_Dtilde,
    certify,
    check_eta_condition,
    dtilde_blocks,
    kernel_bruteforce,
    layer_matrix_bruteforce,
    nullity,
    numerical_rank,
)
from cgnn.network import CgnnConfig, init_params
from cgnn.wavelets import EtaSequence, daubechies_filter, eta


def test_numerical_rank_basics():
    assert numerical_rank(np.zeros((3, 2))) == 0
    assert numerical_rank(np.zeros((0, 2))) == 0
    assert numerical_rank(np.eye(4)) == 4
    A = np.outer([1.0, 2.0, 3.0], [1.0, -1.0])
    assert numerical_rank(A) == 1 and nullity(A) == 1
    # relative threshold: a tiny but honest singular value is dropped
    assert numerical_rank(np.diag([1.0, 1e-9])) == 1
    assert numerical_rank(np.diag([1.0, 1e-7])) == 2


def test_block_banded_layout():
    B0, B1 = np.full((2, 1), 1.0), np.full((2, 1), 2.0)
    M = block_banded([B0, B1], 3)
    assert M.shape == (8, 3)
    assert np.array_equal(M[:, 0], [1, 1, 2, 2, 0, 0, 0, 0])
    assert np.array_equal(M[:, 2], [0, 0, 0, 0, 1, 1, 2, 2])


def test_single_block_reduces_to_D():
    cfg = CgnnConfig(channels=(2, 1), strides=(1,), filter_length=2, support_halfwidth=0, latent_dim=2, wavelet=1)
    p = init_params(cfg, 0)
    D = build_Dl(p, 2, cfg).matrix
    Dt = build_Dtilde(p, 2, cfg, N_support=0)
    assert np.allclose(Dt, D.T)


def test_banded_counterexample_has_full_column_rank():
    # [A 0 0; I A 0; A I A; 0 A I; 0 0 A] with A = diag(1/sqrt 2, 0): the I blocks force the
    # second components to vanish and the first column block chain then forces the first ones
    A = np.diag([1 / np.sqrt(2), 0.0])
    M = block_banded([A, np.eye(2), A], 3)
    assert M.shape == (10, 6)
    assert numerical_rank(M) == 6


def test_shared_block_null_vector_is_detected():
    rng = np.random.default_rng(0)
    v = np.array([2.0, -1.0])
    blocks = [np.outer(rng.standard_normal(3), [1.0, 2.0]) for _ in range(3)]
    M = block_banded(blocks, 4)
    assert numerical_rank(M) < M.shape[1]
    assert np.allclose(M @ np.tile(v, 4), 0)


def test_dtilde_needs_whole_stride_periods():
    with pytest.raises(ValueError):
        dtilde_blocks(np.ones((3, 2, 1)), 1)


def _small(channels=(4, 2, 1), strides=(1, 1), P=4, N=1, wavelet=2, **kw):
    return CgnnConfig(latent_dim=3, channels=channels, strides=strides, filter_length=P, support_halfwidth=N,
                      wavelet=wavelet, first_scale=0, **kw)


@given(st.integers(0, 2**31), st.booleans(), st.sampled_from([1, 2]))
def test_dtilde_kernel_equals_layer_kernel(seed, degenerate, wavelet):
    # the layer is the eta convolution (injective on finite sequences) after the D-tilde map
    cfg = _small(wavelet=wavelet)
    p = init_params(cfg, seed)
    if degenerate:
        p.conv_filters[0][:, 1, :] = 3.0 * p.conv_filters[0][:, 0, :]
    Dt = build_Dtilde(p, 2, cfg)
    assert nullity(Dt) == kernel_bruteforce(p, 2, cfg)
    assert (nullity(Dt) > 0) == degenerate


def test_bruteforce_size_guard():
    cfg = CgnnConfig()
    p = init_params(cfg, 0)
    with pytest.raises(SizeGuardExceeded):
        layer_matrix_bruteforce(p, 3, cfg)
    assert layer_matrix_bruteforce(p, 2, cfg).shape[1] == 4 * 7


def test_eta_condition_verdicts():
    v = check_eta_condition(eta(daubechies_filter(1), 1))
    assert v.passed and v.witness_r == 1 and v.max_abs == pytest.approx(0.5)
    assert v.symbol_max_abs == pytest.approx(1.0)
    z = check_eta_condition(EtaSequence(1, 0, np.zeros(5)))
    assert not z.passed and z.witness_r is None
    assert not check_eta_condition(EtaSequence(1, 0, [])).passed
    for N in range(2, 11):
        assert check_eta_condition(eta(daubechies_filter(N), 1, 8)).passed


def test_activation_mode_selection():
    assert activation_mode_for(CgnnConfig()) == "injective"
    assert activation_mode_for(CgnnConfig(nonlinearity_mode="pointwise", wavelet=1)) == "relaxed"
    assert activation_mode_for(CgnnConfig(nonlinearity_mode="pointwise", wavelet=6)) == "full"


def test_random_params_certify():
    cert = certify(init_params(CgnnConfig(), 0), CgnnConfig())
    assert cert.status == "pass" and cert.overall and cert.failing_layers() == []
    assert [lv.path for lv in cert.per_layer] == ["D", "D"]


def test_duplicate_filter_slices_fail_at_layer_two():
    cfg = CgnnConfig()
    p = init_params(cfg, 0)
    p.conv_filters[0][:, 2, :] = p.conv_filters[0][:, 0, :]
    cert = certify(p, cfg)
    assert cert.status == "fail" and cert.failing_layers() == [2]
    lv = cert.per_layer[0]
    assert lv.rank < lv.required_rank and lv.dtilde_rank < lv.dtilde_required
    assert lv.path == "bruteforce" and lv.nullity >= 1


def test_deficient_D_rescued_by_dtilde():
    # zero the first tap block: D has rank 0, but later taps keep the banded matrix injective
    cfg = CgnnConfig()
    p = init_params(cfg, 1)
    p.conv_filters[0][:2] = 0.0
    cert = certify(p, cfg)
    lv = cert.per_layer[0]
    assert lv.rank == 0 and lv.path == "Dtilde" and cert.status == "pass"


def test_rank_deficient_fully_connected_fails():
    cfg = CgnnConfig()
    p = init_params(cfg, 0)
    p.fc_matrix[:, 1] = p.fc_matrix[:, 0]
    cert = certify(p, cfg)
    assert cert.status == "fail" and not cert.fully_connected["passed"]


def test_relu_fails_on_activation():
    cfg = CgnnConfig(activation=ActivationSpec("relu"))
    cert = certify(init_params(cfg, 0), cfg)
    assert cert.status == "fail" and cert.activation.clause == "injective"


def test_undetermined_when_only_bruteforce_could_decide():
    # odd filter length: no banded matrix, and the brute-force guard is too small
    cfg = CgnnConfig(filter_length=3)
    p = init_params(cfg, 0)
    p.conv_filters[0][:, 1, :] = p.conv_filters[0][:, 0, :]
    cert = certify(p, cfg, max_halfwidth=1)
    assert cert.status == "undetermined"
    assert certify(p, cfg).status == "fail"


def test_certificate_serialises():
    cert = certify(init_params(CgnnConfig(), 0), CgnnConfig())
    doc = json.loads(cert.dumps())
    assert doc["overall"] == "pass" and len(doc["per_layer"]) == 2
    assert doc["tolerances"]["rank_rtol"] == 1e-8
    assert "overall" in cert.table().splitlines()[-1]

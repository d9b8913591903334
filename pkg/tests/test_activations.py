import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cgnn.activations import KINDS, ActivationSpec, UnknownActivation
from cgnn.injectivity import check_activation

SMOOTH = ["hp", "sigmoid", "tanh", "softplus", "identity"]


@pytest.mark.parametrize("kind", KINDS)
def test_derivative_matches_central_differences(kind):
    spec = ActivationSpec(kind, 0.3)
    x = np.linspace(-6, 6, 241)
    x = x[np.abs(x) > 1e-3]  # away from the kinks at 0
    e = 1e-6
    fd = (spec(x + e) - spec(x - e)) / (2 * e)
    assert np.allclose(spec.derivative(x), fd, atol=1e-7)


def test_values():
    x = np.array([-2.0, 0.0, 3.0])
    assert np.allclose(ActivationSpec("leaky_relu", 0.2)(x), [-0.4, 0.0, 3.0])
    assert np.allclose(ActivationSpec("relu")(x), [0.0, 0.0, 3.0])
    assert np.allclose(ActivationSpec("hp")(x), np.abs(x) * np.arctan(x))
    assert np.allclose(ActivationSpec("elu", 1.0)(x), [math.expm1(-2.0), 0.0, 3.0])
    assert np.allclose(ActivationSpec("softplus")(np.array([0.0])), [math.log(2.0)])
    assert ActivationSpec("sigmoid")(np.array([0.0]))[0] == 0.5


def test_kink_convention():
    assert ActivationSpec("leaky_relu", 0.2).derivative(np.array([0.0]))[0] == 0.2
    assert ActivationSpec("relu").derivative(np.array([0.0]))[0] == 0.0


@pytest.mark.parametrize("kind", KINDS)
def test_derivative_bounds_hold_on_samples(kind):
    spec = ActivationSpec(kind, 0.2)
    d = spec.derivative(np.linspace(-50, 50, 20001))
    lo, hi = spec.derivative_bounds
    assert d.min() >= lo - 1e-12 and d.max() <= hi + 1e-12


@given(st.floats(-1e3, 1e3, allow_nan=False), st.sampled_from(KINDS))
def test_linear_growth_bound(x, kind):
    spec = ActivationSpec(kind, 0.2)
    L = spec.linear_growth
    if L is not None:
        assert abs(float(spec(np.array([x]))[0])) <= L * abs(x) * (1 + 1e-12) + 1e-300


# tanh and sigmoid round to constants in double precision beyond |x| ~ 19
@given(st.floats(-8, 8, allow_nan=False), st.floats(1e-3, 5))
def test_injective_kinds_are_strictly_increasing(x, dx):
    for kind in KINDS:
        spec = ActivationSpec(kind, 0.2)
        if spec.injective:
            assert spec(np.array([x + dx]))[0] > spec(np.array([x]))[0]


def test_hp_lipschitz_constant():
    # sup of |atan x| + |x| / (1 + x^2) is attained in the interior and below pi/2 + 1/2
    d = ActivationSpec("hp").derivative(np.linspace(-1e4, 1e4, 2_000_001))
    assert d.max() < math.pi / 2 + 0.5


def test_unknown_kind_and_json():
    with pytest.raises(UnknownActivation):
        ActivationSpec("swish")
    s = ActivationSpec("elu", 0.7)
    assert ActivationSpec.from_json(json.loads(json.dumps(s.to_json()))) == s
    meta = ActivationSpec("hp").metadata()
    assert meta["c1"] and meta["zero_at_zero"] and meta["sign_preserving"] and meta["injective"]


# (kind, full, relaxed, injective): clause that fails, or None for pass
TABLE = [
    ("hp", None, None, None),
    ("leaky_relu", "c1", None, None),
    ("relu", "c1", "injective", "injective"),
    ("sigmoid", "zero_at_zero", "linear_growth", None),
    ("tanh", "derivative_lower_bound", None, None),
    ("softplus", "zero_at_zero", "linear_growth", None),
    ("elu", "c1", None, None),
    ("identity", None, None, None),
]


@pytest.mark.parametrize("kind,full,relaxed,injective", TABLE)
def test_admissibility_table(kind, full, relaxed, injective):
    spec = ActivationSpec(kind, 0.2 if kind != "elu" else 0.5)
    for mode, expect in (("full", full), ("relaxed", relaxed), ("injective", injective)):
        v = check_activation(spec, mode)
        assert v.passed == (expect is None) and v.clause == expect, (kind, mode, v.clause)


def test_elu_with_unit_scale_is_c1_but_saturates():
    # alpha = 1 makes elu C^1; its derivative then decays towards 0 on the negative side
    assert check_activation(ActivationSpec("elu", 1.0), "full").clause == "derivative_lower_bound"


def test_check_activation_rejects_bad_input():
    with pytest.raises(TypeError):
        check_activation("tanh")
    with pytest.raises(ValueError):
        check_activation(ActivationSpec("tanh"), "sideways")

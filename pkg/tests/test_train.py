import numpy as np
import pytest

from cgnn.activations import ActivationSpec
from cgnn.inverse import SignalFrame
from cgnn.network import CgnnConfig, Generator, init_params, layer_layouts
from cgnn.train import (
    DatasetSpec,
    VaeParams,
    adam_init,
    adam_step,
    encode,
    eval_reconstruction,
    fourier_signals,
    init_encoder,
    kld,
    make_dataset,
    reconstruction_error,
    reparameterize,
    train_vae,
    training_targets,
    vae_loss,
    vae_loss_and_grads,
)

TINY = CgnnConfig(latent_dim=3, channels=(2, 1), strides=(1,), filter_length=2, support_halfwidth=1, wavelet=2,
                  activation=ActivationSpec("hp"))


def test_dataset_shapes_and_determinism():
    spec = DatasetSpec(n_train=12, n_test=5, seed=3)
    a, b = make_dataset(spec), make_dataset(spec)
    assert a.train.shape == (12, 1024) and a.test.shape == (5, 1024)
    assert a.train_coeffs.shape[0] == 12 and a.coeff_offset == -10
    assert np.array_equal(a.train, b.train) and np.array_equal(a.test_coeffs, b.test_coeffs)
    assert not np.array_equal(a.train, make_dataset(DatasetSpec(n_train=12, n_test=5, seed=4)).train)


def test_fourier_signals_match_formula():
    a = np.array([[2.0, 0.5, 0.0]])
    b = np.array([[0.0, 0.0, -1.0]])
    t = np.arange(64) / 64
    expected = 1.0 + 0.5 * np.cos(2 * np.pi * t) - np.sin(4 * np.pi * t)
    assert np.allclose(fourier_signals(a, b, 64)[0], expected)


def test_kld_and_losses():
    rng = np.random.default_rng(0)
    mu, lv = rng.standard_normal((2, 7, 4))
    assert np.all(kld(mu, lv) >= 0)
    assert np.allclose(kld(np.zeros(4), np.zeros(4)), 0.0)
    x, xh = rng.standard_normal((2, 7, 10))
    assert np.allclose(reconstruction_error(x, xh), np.sum((x - xh) ** 2, axis=1))
    assert vae_loss(x, xh, mu, lv) >= 0
    assert vae_loss(x, x, np.zeros((7, 4)), np.zeros((7, 4))) == 0.0
    with pytest.raises(ValueError):
        vae_loss(x, xh, mu, lv, beta=-1)
    assert np.array_equal(reparameterize(mu, lv, seed=2), reparameterize(mu, lv, seed=2))
    assert np.array_equal(reparameterize(mu, lv, eps=np.zeros_like(mu)), mu)


def test_adam_first_step_by_hand():
    a = [np.array([1.0, -2.0])]
    g = [np.array([0.5, -3.0])]
    new, state = adam_step(a, g, adam_init(a), lr=0.1)
    # bias correction makes the first step lr * sign(g) up to eps
    assert np.allclose(new[0], [0.9, -1.9], atol=1e-7)
    assert state.t == 1 and np.allclose(state.m[0], 0.1 * g[0])


def _tiny_vae(seed=0):
    return VaeParams(init_encoder(TINY, seed), init_params(TINY, seed + 1), TINY)


def test_vae_gradients_match_finite_differences():
    vae = _tiny_vae()
    n_out = layer_layouts(TINY)[-1].length
    rng = np.random.default_rng(7)
    C = rng.standard_normal((4, n_out))
    eps = rng.standard_normal((4, TINY.latent_dim))
    _, grads = vae_loss_and_grads(vae, C, eps, beta=0.1)
    arrays = vae.arrays()
    assert len(grads) == len(arrays)
    h = 1e-6
    worst = 0.0
    for k, (a, g) in enumerate(zip(arrays, grads)):
        assert g.shape == a.shape
        for idx in list(np.ndindex(a.shape))[:6]:
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[k][idx] += h
            minus[k][idx] -= h
            fp, _ = vae_loss_and_grads(vae.with_arrays(plus), C, eps, beta=0.1)
            fm, _ = vae_loss_and_grads(vae.with_arrays(minus), C, eps, beta=0.1)
            fd = (fp - fm) / (2 * h)
            worst = max(worst, abs(fd - g[idx]) / (1 + abs(fd)))
    assert worst < 1e-4


def test_training_is_bit_reproducible():
    rng = np.random.default_rng(0)
    n_out = layer_layouts(TINY)[-1].length
    C = rng.standard_normal((20, n_out)) * 0.1
    r1 = train_vae(C, TINY, epochs=3, batch=8, seed=5, certify_result=False, test_targets=C[:4])
    r2 = train_vae(C, TINY, epochs=3, batch=8, seed=5, certify_result=False, test_targets=C[:4])
    assert r1.train_loss == r2.train_loss and r1.test_loss == r2.test_loss
    assert all(np.array_equal(a, b) for a, b in zip(r1.vae.arrays(), r2.vae.arrays()))
    assert r1.certificate is None and len(r1.train_loss) == 3


def test_short_desk_training_run(tmp_path):
    c = CgnnConfig()
    frame = SignalFrame(c, 1024)
    ds = make_dataset(DatasetSpec(n_train=10, n_test=4))
    tr, te = training_targets(ds, frame)
    seen = []
    res = train_vae(tr, c, epochs=1, test_targets=te, callback=lambda *a: seen.append(a))
    assert np.isfinite(res.train_loss[0]) and np.isfinite(res.test_loss[0])
    assert len(seen) == 1 and res.certificate is not None
    res.write_curve(tmp_path / "curve.csv")
    assert len(open(tmp_path / "curve.csv").read().splitlines()) == 2
    doc = res.vae.to_json()
    back = VaeParams.from_json(doc)
    assert all(np.array_equal(a, b) for a, b in zip(back.arrays(), res.vae.arrays()))
    rep = eval_reconstruction(res.vae, ds.test, frame)
    assert rep.mse.shape == (4,) and rep.summary()["count"] == 4
    with pytest.raises(ValueError):
        eval_reconstruction(res.vae, ds.test)


def test_eval_reconstruction_of_identity_is_zero(tmp_path):
    X = np.random.default_rng(0).standard_normal((3, 16))
    rep = eval_reconstruction(lambda X: X, X)
    assert rep.mean == 0.0 and rep.variance == 0.0
    rep.write_csv(tmp_path / "r.csv")
    assert open(tmp_path / "r.csv").read().splitlines()[0] == "signal,mse"


def test_encoder_output_shapes():
    enc = init_encoder(TINY, 0)
    n_out = layer_layouts(TINY)[-1].length
    mu, lv = encode(np.zeros((5, n_out)), enc)
    assert mu.shape == lv.shape == (5, TINY.latent_dim)
    y, _ = Generator(init_params(TINY, 0), TINY).forward_batch(mu)
    assert y.shape == (5, n_out)

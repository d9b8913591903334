"""Synthetic smooth signals and a VAE whose decoder is a CGNN."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .grad import backward, forward_tape
from .injectivity import certify
from .inverse import SignalFrame
from .network import CgnnConfig, CgnnParams, Generator, init_params, layer_layouts, restrict_n
from .signals import Layout
from .wavelets import daubechies_filter

log = logging.getLogger(__name__)

__all__ = [
    "DatasetSpec",
    "Dataset",
    "make_dataset",
    "EncoderParams",
    "init_encoder",
    "encode",
    "encode_with_cache",
    "encoder_backward",
    "reparameterize",
    "kld",
    "reconstruction_error",
    "vae_loss",
    "AdamState",
    "adam_init",
    "adam_step",
    "VaeParams",
    "TrainResult",
    "TrainingDiverged",
    "vae_loss_and_grads",
    "train_vae",
    "training_targets",
    "ReconstructionReport",
    "eval_reconstruction",
]


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSpec:
    n_train: int = 500
    n_test: int = 100
    grid_size: int = 1024
    n_freq: int = 2  # harmonics n = 1..n_freq, plus the constant term
    M: int = 6
    seed: int = 0

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class Dataset:
    spec: DatasetSpec
    train: np.ndarray  # (n_train, grid) samples
    test: np.ndarray
    train_coeffs: np.ndarray  # scale log2(grid) - M, on ``coeff_layout``
    test_coeffs: np.ndarray
    coeff_offset: int
    fourier_train: np.ndarray = field(repr=False)
    fourier_test: np.ndarray = field(repr=False)

    def write_csv(self, path, split="train"):
        X = self.train if split == "train" else self.test
        np.savetxt(path, X, delimiter=",", fmt="%.17g")


def fourier_signals(a, b, grid_size: int):
    """x(t) = a_0/2 + sum_n a_n cos(2 pi n t) + b_n sin(2 pi n t) on t = i/grid."""
    t = np.arange(grid_size) / grid_size
    n = np.arange(1, a.shape[1])
    x = 0.5 * a[:, :1] + a[:, 1:] @ np.cos(2 * np.pi * np.outer(n, t)) + b[:, 1:] @ np.sin(2 * np.pi * np.outer(n, t))
    return x


def sample_fourier(rng, count: int, n_freq: int):
    std = 1.0 / (np.arange(n_freq + 1) + 1.0) ** 3  # variance 1/(n+1)^6
    a = rng.standard_normal((count, n_freq + 1)) * std
    b = rng.standard_normal((count, n_freq + 1)) * std
    b[:, 0] = 0.0
    return a, b


def make_dataset(spec: DatasetSpec) -> Dataset:
    """Random low-frequency trigonometric polynomials and their coarse coefficients."""
    rng = np.random.default_rng(spec.seed)
    a, b = sample_fourier(rng, spec.n_train + spec.n_test, spec.n_freq)
    X = fourier_signals(a, b, spec.grid_size)
    J = int(np.log2(spec.grid_size))
    # coefficients are computed with the db6 filter; the frame re-derives them for other wavelets
    taps = daubechies_filter(6).taps
    C, layout = restrict_n(X * 2.0 ** (-J / 2), Layout(0, spec.grid_size), taps, spec.M)
    n = spec.n_train
    fourier = np.concatenate([a, b], axis=1)
    return Dataset(spec, X[:n], X[n:], C[:n], C[n:], layout.offset, fourier[:n], fourier[n:])


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------


@dataclass
class EncoderParams:
    """Strided convolutions down from the decoder output, then a dense map to 2S.

    filters[i] has shape (P, c_out, c_in) and is applied with upconv_adjoint.
    """

    filters: list
    biases: list
    fc_matrix: np.ndarray
    fc_bias: np.ndarray
    lengths: tuple  # input length of every stage, then the flattened length's per-channel n
    strides: tuple
    alpha: float = 0.2

    def arrays(self) -> list:
        return [*self.filters, *self.biases, self.fc_matrix, self.fc_bias]

    def to_json(self) -> dict:
        enc = lambda a: {"shape": list(a.shape), "values": a.ravel().tolist()}  # noqa: E731
        return {
            "filters": [enc(f) for f in self.filters],
            "biases": [enc(b) for b in self.biases],
            "fc_matrix": enc(self.fc_matrix),
            "fc_bias": enc(self.fc_bias),
            "lengths": list(self.lengths),
            "strides": list(self.strides),
            "alpha": self.alpha,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "EncoderParams":
        dec = lambda e: np.asarray(e["values"], dtype=np.float64).reshape(e["shape"])  # noqa: E731
        return cls([dec(e) for e in doc["filters"]], [dec(e) for e in doc["biases"]], dec(doc["fc_matrix"]),
                   dec(doc["fc_bias"]), tuple(doc["lengths"]), tuple(doc["strides"]), doc["alpha"])


def init_encoder(config: CgnnConfig, seed=0) -> EncoderParams:
    rng = np.random.default_rng(seed)
    P = config.filter_length
    chans = config.channels[::-1]
    strides = config.strides[::-1]
    n = layer_layouts(config)[-1].length
    lengths = [n]
    filters, biases = [], []
    for cin, cout, nu in zip(chans[:-1], chans[1:], strides):
        s = 2**nu
        n = (n - P) // s + 1
        lengths.append(n)
        filters.append(rng.standard_normal((P, cout, cin)) / np.sqrt(P * cin))
        biases.append(np.zeros(cout))
    flat = chans[-1] * n
    S = config.latent_dim
    F = rng.standard_normal((2 * S, flat)) / np.sqrt(flat)
    return EncoderParams(filters, biases, F, np.zeros(2 * S), tuple(lengths), tuple(2**nu for nu in strides))


def _leaky(x, a):
    return np.where(x > 0, x, a * x)


def encode_with_cache(X, enc: EncoderParams):
    """X: (B, n) decoder-layout coefficients. Returns (mu, logvar, cache)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    h = X[:, None, :]
    cache = []
    for w, b, s, n_out in zip(enc.filters, enc.biases, enc.strides, enc.lengths[1:]):
        need = s * (n_out - 1) + w.shape[0]
        pre = _kernels.upconv_adjoint(h[:, :, :need], w, s, n_out) + b[None, :, None]
        cache.append((h, pre))
        h = _leaky(pre, enc.alpha)
    flat = h.reshape(h.shape[0], -1)
    out = flat @ enc.fc_matrix.T + enc.fc_bias
    S = out.shape[1] // 2
    cache.append((flat, None))
    return out[:, :S], out[:, S:], cache


def encode(X, enc: EncoderParams):
    mu, logvar, _ = encode_with_cache(X, enc)
    return mu, logvar


def encoder_backward(cache, enc: EncoderParams, g_mu, g_logvar):
    """Parameter gradients of the encoder for cotangents on (mu, logvar)."""
    g_out = np.concatenate([g_mu, g_logvar], axis=1)
    flat = cache[-1][0]
    gF = g_out.T @ flat
    gFb = g_out.sum(axis=0)
    g = (g_out @ enc.fc_matrix).reshape(flat.shape[0], enc.filters[-1].shape[1] if enc.filters else 1, -1)
    gw, gb = [None] * len(enc.filters), [None] * len(enc.filters)
    for i in range(len(enc.filters) - 1, -1, -1):
        h, pre = cache[i]
        w, s = enc.filters[i], enc.strides[i]
        g = g * np.where(pre > 0, 1.0, enc.alpha)
        gb[i] = g.sum(axis=(0, 2))
        need = s * (g.shape[-1] - 1) + w.shape[0]
        gw[i] = _kernels.upconv_weight_grad(g, h[:, :, :need], s, w.shape[0])
        gh = np.zeros(h.shape)
        gh[:, :, :need] = _kernels.upconv(g, w, s)
        g = gh
    return gw, gb, gF, gFb


def reparameterize(mu, logvar, seed=None, eps=None):
    """z = mu + exp(logvar / 2) * eps with eps ~ N(0, I) drawn from ``seed`` unless given."""
    mu = np.asarray(mu, dtype=np.float64)
    if eps is None:
        eps = np.random.default_rng(seed).standard_normal(mu.shape)
    return mu + np.exp(0.5 * np.asarray(logvar)) * eps


def kld(mu, logvar):
    """Per-sample KL(N(mu, diag e^logvar) || N(0, I)), summed over latent coordinates."""
    mu, logvar = np.atleast_2d(mu), np.atleast_2d(logvar)
    return 0.5 * np.sum(np.exp(logvar) + mu**2 - 1.0 - logvar, axis=1)


def reconstruction_error(x, x_hat):
    """Per-signal squared L2 distance of the represented functions.

    Coefficients are orthonormal, so this is the sum over the coefficient
    axis; it matches the mean squared error of grid samples on [0, 1) up to
    discretisation.
    """
    x, x_hat = np.atleast_2d(x), np.atleast_2d(x_hat)
    return np.sum((x - x_hat) ** 2, axis=1)


def vae_loss(x, x_hat, mu, logvar, beta=1e-3) -> float:
    """Batch mean of reconstruction error plus beta times the KL divergence."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    return float(np.mean(reconstruction_error(x, x_hat)) + beta * np.mean(kld(mu, logvar)))


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    t: int
    m: list
    v: list


def adam_init(arrays) -> AdamState:
    return AdamState(0, [np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(arrays, grads, state: AdamState, lr=0.01, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update. Returns (new arrays, new state)."""
    b1, b2 = betas
    t = state.t + 1
    new, ms, vs = [], [], []
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        new.append(a - lr * mhat / (np.sqrt(vhat) + eps))
        ms.append(m)
        vs.append(v)
    return new, AdamState(t, ms, vs)


# ---------------------------------------------------------------------------
# VAE
# ---------------------------------------------------------------------------


@dataclass
class VaeParams:
    encoder: EncoderParams
    decoder: CgnnParams
    config: CgnnConfig

    def arrays(self) -> list:
        return [*self.encoder.arrays(), *self.decoder.arrays()]

    def with_arrays(self, arrays) -> "VaeParams":
        e = self.encoder
        nf = len(e.filters)
        it = iter(arrays)
        filters = [next(it) for _ in range(nf)]
        biases = [next(it) for _ in range(nf)]
        enc = EncoderParams(filters, biases, next(it), next(it), e.lengths, e.strides, e.alpha)
        nl = len(self.decoder.conv_filters)
        F, b = next(it), next(it)
        dec = CgnnParams(F, b, [next(it) for _ in range(nl)], [next(it) for _ in range(nl)])
        return VaeParams(enc, dec, self.config)

    def to_json(self) -> dict:
        return {"encoder": self.encoder.to_json(), "decoder": self.decoder.to_json(self.config)}

    @classmethod
    def from_json(cls, doc: dict) -> "VaeParams":
        dec, config = CgnnParams.from_json(doc["decoder"])
        return cls(EncoderParams.from_json(doc["encoder"]), dec, config)

    def autoencode(self, C):
        """Decoder output at the encoder mean for (B, n) decoder-layout coefficients."""
        mu, _ = encode(C, self.encoder)
        y, _ = Generator(self.decoder, self.config).forward_batch(mu)
        return y


class TrainingDiverged(FloatingPointError):
    pass


def vae_loss_and_grads(vae: VaeParams, C, eps, beta=1e-3):
    """Loss on a batch of decoder-layout coefficient targets and gradients for every array."""
    B = C.shape[0]
    mu, logvar, cache = encode_with_cache(C, vae.encoder)
    z = reparameterize(mu, logvar, eps=eps)
    out, tape = forward_tape(z, vae.decoder, vae.config)
    loss = vae_loss(C, out, mu, logvar, beta)
    g_out = 2.0 * (out - C) / B
    gz, dgrads = backward(tape, g_out, param_grads=True)
    sd = np.exp(0.5 * logvar)
    g_mu = gz + beta * mu / B
    g_logvar = gz * eps * 0.5 * sd + beta * 0.5 * (np.exp(logvar) - 1.0) / B
    gw, gb, gF, gFb = encoder_backward(cache, vae.encoder, g_mu, g_logvar)
    return loss, [*gw, *gb, gF, gFb, *dgrads.arrays()]


@dataclass
class TrainResult:
    vae: VaeParams
    train_loss: list
    test_loss: list
    certificate: object = None
    beta: float = 1e-3
    seed: int = 0

    def write_curve(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "test_loss"])
            for k, (a, b) in enumerate(zip(self.train_loss, self.test_loss), start=1):
                w.writerow([k, repr(float(a)), repr(float(b))])


def _eval_loss(vae: VaeParams, C, beta, rng):
    mu, logvar = encode(C, vae.encoder)
    z = reparameterize(mu, logvar, eps=rng.standard_normal(mu.shape))
    out, _ = Generator(vae.decoder, vae.config).forward_batch(z)
    return vae_loss(C, out, mu, logvar, beta)


def train_vae(targets, config: CgnnConfig, epochs=20, batch=32, beta=1e-3, seed=0, lr=0.01,
              test_targets=None, certify_result=True, callback=None, lr_final=None) -> TrainResult:
    """Adam on MSE + beta * KLD. ``targets`` are (n, n_out) decoder-layout coefficients.

    The epoch loss is the mean of the minibatch losses seen during that epoch.
    With ``lr_final`` the learning rate decays geometrically from ``lr`` to
    ``lr_final`` over the run; otherwise it stays constant.
    """
    rng = np.random.default_rng(seed)
    vae = VaeParams(init_encoder(config, rng.integers(2**32)), init_params(config, rng.integers(2**32)), config)
    arrays = vae.arrays()
    state = adam_init(arrays)
    train_curve, test_curve = [], []
    n = targets.shape[0]
    for epoch in range(epochs):
        rate = lr if lr_final is None or epochs == 1 else lr * (lr_final / lr) ** (epoch / (epochs - 1))
        order = rng.permutation(n)
        losses, weights = [], []
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            C = targets[idx]
            eps = rng.standard_normal((idx.size, config.latent_dim))
            loss, grads = vae_loss_and_grads(vae, C, eps, beta)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}, batch starting {start}: {loss}")
            arrays, state = adam_step(arrays, grads, state, rate)
            vae = vae.with_arrays(arrays)
            losses.append(loss)
            weights.append(idx.size)
        train_curve.append(float(np.average(losses, weights=weights)))
        if test_targets is not None:
            test_curve.append(_eval_loss(vae, test_targets, beta, np.random.default_rng(seed + epoch)))
        else:
            test_curve.append(float("nan"))
        log.info("epoch %d: train %.4e test %.4e", epoch + 1, train_curve[-1], test_curve[-1])
        if callback is not None:
            callback(epoch + 1, train_curve[-1], test_curve[-1])
    cert = None
    if certify_result:
        cert = certify(vae.decoder, config)
    return TrainResult(vae, train_curve, test_curve, cert, beta, seed)


def training_targets(dataset: Dataset, frame: SignalFrame):
    return frame.coeffs_from_samples(dataset.train), frame.coeffs_from_samples(dataset.test)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class ReconstructionReport:
    mse: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.mse.mean())

    @property
    def variance(self) -> float:
        return float(self.mse.var())

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["signal", "mse"])
            for i, m in enumerate(self.mse):
                w.writerow([i, repr(float(m))])

    def summary(self) -> dict:
        return {"count": int(self.mse.size), "mean": self.mean, "variance": self.variance}


def eval_reconstruction(autoencode, samples, frame: SignalFrame | None = None) -> ReconstructionReport:
    """Per-signal MSE between grid samples and their reconstructions.

    ``autoencode`` is a VaeParams (then ``frame`` is required and the encoder
    mean is decoded) or any callable mapping (B, grid) samples to (B, grid).
    """
    X = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if isinstance(autoencode, VaeParams):
        if frame is None:
            raise ValueError("a SignalFrame is needed to reconstruct samples from a VAE")
        X_hat = frame.samples_from_coeffs(autoencode.autoencode(frame.coeffs_from_samples(X)))
    else:
        X_hat = np.atleast_2d(autoencode(X))
    return ReconstructionReport(np.mean((X - X_hat) ** 2, axis=1))


def save_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)

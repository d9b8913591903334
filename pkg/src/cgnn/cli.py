"""Command line entry point: ``cgnn <command> [options]``.

Exit codes: 0 success, 1 usage or input error, 2 verification failure,
3 undetermined verdict, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import _kernels
from .config import ConfigError, cgnn_config, config_hash, load_config, seed_of
from .grad import backward, forward_tape, grad_check, kink_distance
from .injectivity import certify
from .inverse import (
    LandweberDiverged,
    SignalFrame,
    add_noise,
    apply_blur,
    adjoint_blur,
    gaussian_blur,
    landweber,
    relative_mse,
)
from .network import CgnnParams, Generator, init_params
from .train import (
    DatasetSpec,
    TrainingDiverged,
    VaeParams,
    eval_reconstruction,
    make_dataset,
    train_vae,
    training_targets,
)
from .wavelets import daubechies_filter, eta

log = logging.getLogger("cgnn")

EXIT_OK, EXIT_USAGE, EXIT_FAIL, EXIT_UNDETERMINED, EXIT_DIVERGED = 0, 1, 2, 3, 4
GRADCHECK_TOL = 1e-4
KINK_MARGIN = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


@contextlib.contextmanager
def staged_output(out_dir: str, force: bool = False):
    """Yield a scratch directory that replaces ``out_dir`` only if the body succeeds."""
    out_dir = os.path.abspath(out_dir)
    if os.path.exists(out_dir) and os.listdir(out_dir) and not force:
        raise UsageError(f"output directory {out_dir} exists and is not empty (use --force)")
    parent = os.path.dirname(out_dir)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".partial-", dir=parent)
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if os.path.exists(out_dir):
        shutil.rmtree(out_dir)
    os.replace(tmp, out_dir)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_resolved(dirpath, cfg, extra=None):
    doc = {"config": cfg, "config_hash": config_hash(cfg), "seed": cfg["seeds"]["base"], "backend": _kernels.BACKEND}
    doc.update(extra or {})
    _write_json(os.path.join(dirpath, "config.resolved.json"), doc)


def _config_from_args(args) -> dict:
    over: dict = {}
    for section, key, attr in [
        ("wavelet", "N", "wavelet"),
        ("wavelet", "K", "K"),
        ("train", "epochs", "epochs"),
        ("train", "beta", "beta"),
        ("train", "lr", "lr"),
        ("train", "lr_final", "lr_final"),
        ("train", "batch", "batch"),
        ("train", "n_train", "n_train"),
        ("train", "n_test", "n_test"),
        ("train", "grid_size", "grid"),
        ("inverse", "tau", "tau"),
        ("inverse", "h", "h"),
        ("inverse", "max_iter", "max_iter"),
        ("inverse", "signals", "signals"),
        ("seeds", "base", "seed"),
    ]:
        v = getattr(args, attr, None)
        if v is not None:
            over.setdefault(section, {})[key] = v
    act = getattr(args, "activation", None)
    if act is not None:
        over.setdefault("cgnn", {})["activation"] = {"kind": act, "alpha": getattr(args, "alpha", None) or 0.2}
    if getattr(args, "out", None) is not None:
        over["output_dir"] = args.out
    return load_config(getattr(args, "config", None), over)


def _load_model(path):
    """Params JSON or a VAE checkpoint; returns (CgnnParams, CgnnConfig, VaeParams or None)."""
    with open(path) as fh:
        doc = json.load(fh)
    if "decoder" in doc:
        vae = VaeParams.from_json(doc)
        return vae.decoder, vae.config, vae
    params, config = CgnnParams.from_json(doc)
    return params, config, None


def _dataset_spec(cfg) -> DatasetSpec:
    t = cfg["train"]
    return DatasetSpec(t["n_train"], t["n_test"], t["grid_size"], t["n_freq"], t["M"], seed_of(cfg, "data"))


def _write_matrix_csv(path, header, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_eta(args) -> int:
    filt = daubechies_filter(args.wavelet)
    e = eta(filt, args.nu, args.K)
    rows = [(r, e(r)) for r in range(e.r_min, e.r_min + e.values.size)]
    if args.csv:
        _write_matrix_csv(args.csv, ["r", "eta"], list(zip(*rows)))
    else:
        print("r,eta")
        for r, v in rows:
            print(f"{r},{v!r}")
    if args.convergence:
        print(f"# quadrature convergence for db{args.wavelet}, nu={args.nu}", file=sys.stderr)
        prev = None
        for K in range(max(args.nu, args.K - 4), args.K + 3, 2):
            cur = eta(filt, args.nu, K)
            if prev is not None:
                d = np.abs(cur.values - prev.values).max()
                print(f"#   K={K - 2}->{K}: max change {d:.3e}", file=sys.stderr)
            prev = cur
    return EXIT_OK


def cmd_init_params(args) -> int:
    cfg = _config_from_args(args)
    config = cgnn_config(cfg)
    params = init_params(config, seed_of(cfg, "init"))
    doc = params.to_json(config)
    if args.output:
        _write_json(args.output, doc)
    else:
        json.dump(doc, sys.stdout)
        print()
    return EXIT_OK


def cmd_certify(args) -> int:
    params, config, _ = _load_model(args.params)
    cert = certify(params, config, max_halfwidth=args.max_halfwidth)
    print(cert.table())
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(cert.dumps() + "\n")
    return {"pass": EXIT_OK, "fail": EXIT_FAIL, "undetermined": EXIT_UNDETERMINED}[cert.status]


def cmd_gen_data(args) -> int:
    cfg = _config_from_args(args)
    spec = _dataset_spec(cfg)
    ds = make_dataset(spec)
    with staged_output(cfg["output_dir"], args.force) as tmp:
        np.savetxt(os.path.join(tmp, "train.csv"), ds.train, delimiter=",", fmt="%.17g")
        np.savetxt(os.path.join(tmp, "test.csv"), ds.test, delimiter=",", fmt="%.17g")
        np.savetxt(os.path.join(tmp, "train_coeffs.csv"), ds.train_coeffs, delimiter=",", fmt="%.17g")
        np.savetxt(os.path.join(tmp, "test_coeffs.csv"), ds.test_coeffs, delimiter=",", fmt="%.17g")
        np.savetxt(os.path.join(tmp, "fourier_train.csv"), ds.fourier_train, delimiter=",", fmt="%.17g")
        np.savetxt(os.path.join(tmp, "fourier_test.csv"), ds.fourier_test, delimiter=",", fmt="%.17g")
        _write_json(os.path.join(tmp, "dataset.json"), {"spec": spec.to_json(), "coeff_offset": ds.coeff_offset,
                                                         "coeff_scale": int(np.log2(spec.grid_size)) - spec.M})
        _write_resolved(tmp, cfg)
    print(f"wrote {spec.n_train} train / {spec.n_test} test signals to {cfg['output_dir']}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    config = cgnn_config(cfg)
    t = cfg["train"]
    frame = SignalFrame(config, t["grid_size"], t["M"])
    ds = make_dataset(_dataset_spec(cfg))
    tr, te = training_targets(ds, frame)
    with staged_output(cfg["output_dir"], args.force) as tmp:
        res = train_vae(tr, config, epochs=t["epochs"], batch=t["batch"], beta=t["beta"], seed=seed_of(cfg, "train"),
                        lr=t["lr"], lr_final=t["lr_final"], test_targets=te,
                        callback=lambda e, a, b: print(f"epoch {e:3d}  train {a:.6f}  test {b:.6f}"))
        _write_json(os.path.join(tmp, "vae.json"), res.vae.to_json())
        _write_json(os.path.join(tmp, "decoder.json"), res.vae.decoder.to_json(config))
        res.write_curve(os.path.join(tmp, "loss_curve.csv"))
        with open(os.path.join(tmp, "certificate.json"), "w") as fh:
            fh.write(res.certificate.dumps() + "\n")
        drop = 1.0 - res.train_loss[-1] / res.train_loss[0]
        _write_json(os.path.join(tmp, "summary.json"), {"beta": t["beta"], "epochs": t["epochs"], "lr": t["lr"],
                                                        "final_train_loss": res.train_loss[-1], "first_epoch_loss": res.train_loss[0],
                                                        "relative_decrease": drop, "certificate": res.certificate.status})
        _write_resolved(tmp, cfg)
    print(f"loss decreased {100 * drop:.1f}% over {t['epochs']} epochs (beta={t['beta']})")
    print(res.certificate.table())
    return EXIT_OK


def _deblur_one(payload):
    model_path, cfg, i = payload
    params, config, _ = _load_model(model_path)
    inv, t = cfg["inverse"], cfg["train"]
    frame = SignalFrame(config, t["grid_size"], t["M"])
    ds = make_dataset(_dataset_spec(cfg))
    blur = gaussian_blur(t["grid_size"], inv["variance"], inv["taps"])
    x = ds.test[i]
    y = add_noise(apply_blur(x, blur), inv["tau"], seed_of(cfg, "noise") * 1000 + i)
    trace = landweber(y, params, config, blur, frame, h=inv["h"], max_iter=inv["max_iter"],
                      stop_tol=inv["stop_tol"], seed=seed_of(cfg, "landweber") * 1000 + i, x_true=x)
    x_hat = frame.samples_from_coeffs(Generator(params, config).forward(trace.z).coeffs)[0]
    return i, x, y, x_hat, trace


def cmd_deblur(args) -> int:
    cfg = _config_from_args(args)
    inv, t = cfg["inverse"], cfg["train"]
    if inv["signals"] > t["n_test"]:
        raise UsageError("more signals requested than the test set holds")
    payloads = [(args.model, cfg, i) for i in range(inv["signals"])]
    with staged_output(cfg["output_dir"], args.force) as tmp:
        if args.jobs > 1:
            with ProcessPoolExecutor(args.jobs) as pool:
                results = list(pool.map(_deblur_one, payloads))
        else:
            results = [_deblur_one(p) for p in payloads]
        rows, num, den, bnum = [], 0.0, 0.0, 0.0
        grid = np.arange(t["grid_size"]) / t["grid_size"]
        for i, x, y, x_hat, trace in results:
            trace.write_csv(os.path.join(tmp, f"trace_{i:03d}.csv"))
            _write_matrix_csv(os.path.join(tmp, f"recon_{i:03d}.csv"), ["t", "x_true", "y", "x_hat"], [grid, x, y, x_hat])
            rows.append({"signal": i, "blurred_rel_mse": relative_mse(y, x), "final_rel_mse": relative_mse(x_hat, x),
                         "iterations": trace.iterations, "stopped": trace.stopped,
                         "initial_residual": trace.residuals[0], "final_residual": trace.residuals[-1]})
            num += float(np.sum((x_hat - x) ** 2))
            bnum += float(np.sum((y - x) ** 2))
            den += float(np.sum(x**2))
        blur = gaussian_blur(t["grid_size"], inv["variance"], inv["taps"])
        summary = {"signals": rows, "aggregate_blurred_rel_mse": bnum / den, "aggregate_final_rel_mse": num / den,
                   "tau": inv["tau"], "h": inv["h"], "blur": blur.metadata(), "model": os.path.abspath(args.model)}
        _write_json(os.path.join(tmp, "summary.json"), summary)
        _write_resolved(tmp, cfg)
    print(f"tau={inv['tau']}: aggregate relative MSE blurred {bnum / den:.4f} -> reconstructed {num / den:.4f}")
    return EXIT_OK


def _gradcheck_points(params, config, n, seed):
    rng = np.random.default_rng(seed)
    pts = []
    while len(pts) < n:
        z = rng.standard_normal(config.latent_dim)
        _, tape = forward_tape(z, params, config)
        if config.nonlinearity_mode != "coefficient" or kink_distance(tape) > KINK_MARGIN:
            pts.append(z)
    return pts


def cmd_gradcheck(args) -> int:
    cfg = _config_from_args(args)
    if args.model:
        params, config, _ = _load_model(args.model)
    else:
        config = cgnn_config(cfg)
        params = init_params(config, seed_of(cfg, "init"))
    t = cfg["train"]
    frame = SignalFrame(config, t["grid_size"], t["M"])
    blur = gaussian_blur(t["grid_size"], cfg["inverse"]["variance"], cfg["inverse"]["taps"])
    y = apply_blur(make_dataset(_dataset_spec(cfg)).test[0], blur)

    def objective(z):
        x = frame.samples_from_coeffs(Generator(params, config).forward(z).coeffs)[0]
        return 0.5 * float(np.sum((apply_blur(x, blur) - y) ** 2))

    def gradient(z):
        out, tape = forward_tape(z, params, config)
        r = apply_blur(frame.samples_from_coeffs(out)[0], blur) - y
        return backward(tape, frame.samples_transpose(adjoint_blur(r, blur))[0])

    errs = [grad_check(objective, gradient, z, args.eps) for z in _gradcheck_points(params, config, args.points, seed_of(cfg, "init"))]
    worst = max(errs)
    print(f"max relative error over {len(errs)} points: {worst:.3e} (threshold {GRADCHECK_TOL:g})")
    return EXIT_OK if worst < GRADCHECK_TOL else EXIT_FAIL


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    _, config, vae = _load_model(args.model)
    if vae is None:
        raise UsageError("eval needs a VAE checkpoint (vae.json from `cgnn train`)")
    t = cfg["train"]
    frame = SignalFrame(config, t["grid_size"], t["M"])
    ds = make_dataset(_dataset_spec(cfg))
    rep = eval_reconstruction(vae, ds.test, frame)
    with staged_output(cfg["output_dir"], args.force) as tmp:
        rep.write_csv(os.path.join(tmp, "reconstruction_mse.csv"))
        _write_json(os.path.join(tmp, "summary.json"), rep.summary())
        _write_resolved(tmp, cfg)
    print(f"test MSE over {rep.mse.size} signals: mean {rep.mean:.6f}, variance {rep.variance:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cgnn", description="Continuous generative networks on wavelet scaling coefficients.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out=True):
        sp.add_argument("--config", help="experiment JSON (unknown keys are rejected)")
        sp.add_argument("--seed", type=int, help="base seed (CGNN_SEED overrides)")
        sp.add_argument("--wavelet", type=int, help="Daubechies order N (1..10)")
        sp.add_argument("--grid", type=int, help="samples per signal")
        if out:
            sp.add_argument("--out", help="output directory")
            sp.add_argument("--force", action="store_true", help="replace an existing output directory")

    sp = sub.add_parser("eta", help="print the eta_nu table")
    sp.add_argument("--wavelet", type=int, default=1)
    sp.add_argument("--nu", type=int, default=1)
    sp.add_argument("--K", type=int, default=10)
    sp.add_argument("--csv", help="write the table here instead of stdout")
    sp.add_argument("--convergence", action="store_true", help="report changes between K-4, K-2, K, K+2")
    sp.set_defaults(func=cmd_eta)

    sp = sub.add_parser("init-params", help="write randomly initialised generator parameters")
    common(sp, out=False)
    sp.add_argument("--activation", help="activation kind")
    sp.add_argument("--alpha", type=float)
    sp.add_argument("-o", "--output", help="params JSON path (stdout if omitted)")
    sp.set_defaults(func=cmd_init_params)

    sp = sub.add_parser("certify", help="injectivity certificate for a params or VAE file")
    sp.add_argument("--params", required=True)
    sp.add_argument("--json", help="write the certificate JSON here")
    sp.add_argument("--max-halfwidth", type=int, default=8, help="brute-force size guard")
    sp.set_defaults(func=cmd_certify)

    sp = sub.add_parser("gen-data", help="write the synthetic dataset")
    common(sp)
    sp.add_argument("--n-train", type=int)
    sp.add_argument("--n-test", type=int)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train the VAE")
    common(sp)
    sp.add_argument("--n-train", type=int)
    sp.add_argument("--n-test", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch", type=int)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--lr-final", type=float)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("deblur", help="Landweber reconstruction of blurred test signals")
    common(sp)
    sp.add_argument("--model", required=True, help="vae.json or params JSON")
    sp.add_argument("--tau", type=float, help="noise level")
    sp.add_argument("--h", type=float, help="step size")
    sp.add_argument("--max-iter", type=int)
    sp.add_argument("--signals", type=int, help="number of test signals")
    sp.add_argument("--n-test", type=int)
    sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    sp.set_defaults(func=cmd_deblur)

    sp = sub.add_parser("gradcheck", help="finite-difference check of the deblurring gradient")
    common(sp, out=False)
    sp.add_argument("--model", help="params or VAE file (random init if omitted)")
    sp.add_argument("--activation")
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--points", type=int, default=20)
    sp.add_argument("--eps", type=float, default=1e-6)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("eval", help="per-signal reconstruction MSE of a trained VAE")
    common(sp)
    sp.add_argument("--model", required=True)
    sp.add_argument("--n-test", type=int)
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"cgnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LandweberDiverged, TrainingDiverged, FloatingPointError) as exc:
        print(f"cgnn: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"cgnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

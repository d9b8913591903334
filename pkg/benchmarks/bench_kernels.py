"""Compare the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20] [--no-end-to-end]

Kernel timings call both implementations in-process. The end-to-end rows run
a short training job and a Landweber solve in fresh interpreters, once with
CGNN_DISABLE_NUMBA=1 and once without.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from cgnn import _kernels as K

END_TO_END = """
import time, numpy as np
from cgnn.network import CgnnConfig, init_params
from cgnn.inverse import SignalFrame, gaussian_blur, apply_blur, landweber
from cgnn.train import DatasetSpec, make_dataset, train_vae, training_targets
c = CgnnConfig(); fr = SignalFrame(c, 1024)
ds = make_dataset(DatasetSpec(n_train=64, n_test=4))
tr, _ = training_targets(ds, fr)
train_vae(tr[:8], c, epochs=1, certify_result=False)  # compile
t = time.perf_counter(); train_vae(tr, c, epochs=2, certify_result=False); a = time.perf_counter() - t
blur = gaussian_blur(1024); y = apply_blur(ds.test[0], blur); p = init_params(c, 0)
landweber(y, p, c, blur, fr, max_iter=2)
t = time.perf_counter(); landweber(y, p, c, blur, fr, max_iter=200, stop_tol=None); b = time.perf_counter() - t
print(a, b)
"""


def _best(fn, args, repeat):
    fn(*args)  # warm-up (and JIT compilation)
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t)
    return best


def kernel_cases(rng):
    x = rng.standard_normal((32, 2, 58))
    w = rng.standard_normal((4, 2, 1))
    y = K.numpy_upconv(x, w, 2)
    rows = rng.standard_normal((160, 1024))
    taps = rng.random(375)
    full = K.numpy_conv_rows(rows, taps)
    return [
        ("upconv  B=32 2->1 n=58 s=2", K.numpy_upconv, K.numba_upconv, (x, w, 2)),
        ("upconv_adjoint", K.numpy_upconv_adjoint, K.numba_upconv_adjoint, (y, w, 2, 58)),
        ("upconv_weight_grad", K.numpy_upconv_weight_grad, K.numba_upconv_weight_grad, (x, y, 2, 4)),
        ("conv_rows 160x1024 * 375", K.numpy_conv_rows, K.numba_conv_rows, (rows, taps)),
        ("corr_rows 160x1398 * 375", K.numpy_corr_rows, K.numba_corr_rows, (full, taps)),
    ]


def end_to_end():
    out = {}
    for name, flag in (("numpy", "1"), ("numba", "0")):
        env = dict(os.environ, CGNN_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True, check=True)
        out[name] = [float(v) for v in res.stdout.split()]
    return [("train 2 epochs, 64 signals", *[out[k][0] for k in ("numpy", "numba")]),
            ("landweber 200 iterations", *[out[k][1] for k in ("numpy", "numba")])]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--no-end-to-end", action="store_true")
    args = ap.parse_args()
    if not hasattr(K, "numba_upconv"):
        sys.exit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(0)
    rows = []
    for name, slow, fast, a in kernel_cases(rng):
        assert np.allclose(slow(*a), fast(*a))
        rows.append((name, _best(slow, a, args.repeat), _best(fast, a, args.repeat)))
    if not args.no_end_to_end:
        rows += end_to_end()
    print(f"{'case':32s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s}")
    for name, a, b in rows:
        print(f"{name:32s} {1e3 * a:11.3f} {1e3 * b:11.3f} {a / b:7.1f}x")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Times the numba kernels against their pure-numpy fallbacks.

Run from the repo root after installing the package:

    python benchmarks/bench_kernels.py [--size 1024x256] [--repeats 200]

The table reports best-of-repeats wall time per call and the speedup. A
final row times one full training step through both backends by swapping
the dispatch table (of interest because matmuls, which both backends hand
to BLAS, dominate the step).
"""

import argparse
import time

import numpy as np

from adadrug import kernels


def best_time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def parse_size(text):
    rows, cols = text.lower().split("x")
    return int(rows), int(cols)


def kernel_cases(shape, rng):
    x = rng.normal(size=shape)
    g = rng.normal(size=shape)
    out = kernels.sigmoid_numpy(x)
    p = rng.normal(size=shape)
    m, v = np.zeros(shape), np.zeros(shape)
    a = rng.normal(size=(256, shape[1]))
    b = rng.normal(size=(128, shape[1]))
    return [
        ("sigmoid", lambda f: f(x),
         kernels.sigmoid_numpy, getattr(kernels, "sigmoid_numba", None)),
        ("sigmoid_bwd", lambda f: f(out, g),
         kernels.sigmoid_bwd_numpy, getattr(kernels, "sigmoid_bwd_numba", None)),
        ("relu_bwd", lambda f: f(x, g),
         kernels.relu_bwd_numpy, getattr(kernels, "relu_bwd_numba", None)),
        ("abs_bwd", lambda f: f(x, g),
         kernels.abs_bwd_numpy, getattr(kernels, "abs_bwd_numba", None)),
        ("adam_step", lambda f: f(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 3),
         kernels.adam_step_numpy, getattr(kernels, "adam_step_numba", None)),
        ("pairwise_sq_dists", lambda f: f(a, b),
         kernels.pairwise_sq_dists_numpy,
         getattr(kernels, "pairwise_sq_dists_numba", None)),
    ]


def bench_training_step(repeats):
    """One gradient step on a small synthetic batch under each backend."""
    from adadrug import data, synth, train

    sb = synth.generate(synth.SynthConfig(n_per_domain=128, n_target=128))
    cfg = synth.bench_train_config(epochs=1)
    batch = data.assemble_batches(sb.bundle, cfg.batch_size, seed=0)[0]
    from adadrug import model as mdl

    bundle = mdl.init_params(train.build_specs(60, cfg), 0)
    train.train_step(bundle, batch, cfg, 1.0)  # warm the JIT
    return best_time(lambda: train.train_step(bundle, batch, cfg, 1.0),
                     max(10, repeats // 10))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--size", default="1024x256", help="matrix shape ROWSxCOLS")
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()
    shape = parse_size(args.size)

    if kernels.HAVE_NUMBA:
        rng = np.random.default_rng(0)
        print(f"matrix {shape[0]}x{shape[1]}, best of {args.repeats} calls")
        print(f"{'kernel':<20} {'numpy':>12} {'numba':>12} {'speedup':>9}")
        for name, call, np_fn, nb_fn in kernel_cases(shape, rng):
            call(nb_fn)  # compile outside the timed region
            t_np = best_time(lambda: call(np_fn), args.repeats)
            t_nb = best_time(lambda: call(nb_fn), args.repeats)
            print(f"{name:<20} {t_np * 1e6:>10.1f}us {t_nb * 1e6:>10.1f}us "
                  f"{t_np / t_nb:>8.2f}x")
    else:
        print("numba kernels unavailable (missing or disabled via "
              f"{kernels.ENV_VAR}); timing the numpy path only")

    step = bench_training_step(args.repeats)
    print(f"\nfull train step under backend={kernels.BACKEND!r}: {step * 1e3:.2f} ms")
    if kernels.BACKEND == "numba":
        print("(set ADADRUG_BACKEND=numpy and rerun to compare the whole step)")


if __name__ == "__main__":
    main()

"""Benchmark the compiled evidential kernels against the numpy fallback.

The kernels cover the per-batch loss/gradient head and the per-epoch
label-weight update; the network matrix products go through BLAS in both
configurations, so the end-to-end gap narrows as the model grows.

    python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import time

import numpy as np

import robust_pll
from robust_pll import _kernels, core, data
from robust_pll._kernels import get_backend


def _time(fn, *args, repeats=7):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(backends, n, k, seed=0):
    rng = np.random.default_rng(seed)
    evidence = np.ascontiguousarray(rng.uniform(0.0, 10.0, (n, k)))
    weights = np.ascontiguousarray(rng.dirichlet(np.ones(k), n))
    mask = (rng.random((n, k)) < 0.5).astype(np.uint8)
    mask[np.arange(n), rng.integers(0, k, n)] = 1

    cases = [
        ("sq_loss_value_grad", (evidence, weights)),
        ("kl_value_grad", (evidence, mask)),
        ("ce_loss_value_grad", (evidence, weights)),
        ("mse_weight_update", (weights, mask)),
    ]
    print(f"\nkernel timings, shape ({n}, {k}), best of 7 [ms]")
    header = f"{'kernel':24s}" + "".join(f"{name:>12s}" for name, _ in backends)
    print(header + f"{'speedup':>10s}")
    for fname, args in cases:
        times = [_time(getattr(mod, fname), *args) for _, mod in backends]
        row = f"{fname:24s}" + "".join(f"{1e3 * t:12.3f}" for t in times)
        if len(times) == 2 and times[1] > 0:
            row += f"{times[0] / times[1]:9.1f}x"
        print(row)


def bench_end_to_end(backend_mods, quick):
    rng = np.random.default_rng(3)
    n, d, k = (2000, 64, 10) if quick else (8000, 256, 10)
    protos = rng.uniform(0, 1, (k, d))
    y = rng.integers(0, k, n)
    X = np.clip(protos[y] + 0.5 * rng.normal(size=(n, d)), 0, 1)
    cand = rng.random((n, k)) < 0.4
    cand[np.arange(n), y] = True
    ds = data.PartialDataset(X, cand, y)
    cfg = core.TrainConfig(epochs=3, batch_size=256, seed=0, hidden_dims=(300, 300, 300))

    names = [
        "sq_loss_value_grad", "kl_value_grad", "ce_loss_value_grad",
        "sq_loss_terms", "kl_value", "mse_weight_update",
    ]
    saved = {name: getattr(_kernels, name) for name in names}
    print(f"\nend-to-end training, n={n}, d={d}, 3 epochs [s]")
    try:
        for label, mod in backend_mods:
            for name in names:
                setattr(_kernels, name, getattr(mod, name))
            t0 = time.perf_counter()
            core.train(ds, cfg)
            print(f"  {label:10s} {time.perf_counter() - t0:8.2f}")
    finally:
        for name, fn in saved.items():
            setattr(_kernels, name, fn)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true", help="smaller sizes")
    args = parser.parse_args()

    backends = [("numpy", get_backend("numpy"))]
    try:
        backends.append(("compiled", get_backend("compiled")))
    except (ImportError, ValueError):
        print("compiled backend unavailable; timing the numpy fallback only")
    print(f"active package backend: {robust_pll.kernel_backend()}")

    for n, k in ((256, 10), (60000, 10)) if not args.quick else ((256, 10), (8000, 10)):
        bench_kernels(backends, n, k)
    bench_end_to_end(backends, args.quick)


if __name__ == "__main__":
    main()

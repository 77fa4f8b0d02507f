"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--users 2000] [--items 500] [--repeat 5]

Both paths are imported directly, so the L3AE_DISABLE_NUMBA flag does not
matter here. The first numba call (compilation or cache load) is excluded.
"""

import argparse
import time

import numpy as np
import scipy.sparse as sp

from l3ae import kernels


def best_of(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--users", type=int, default=2000)
    ap.add_argument("--items", type=int, default=500)
    ap.add_argument("--density", type=float, default=0.04)
    ap.add_argument("--k", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    x = sp.random(args.users, args.items, density=args.density, format="csr", random_state=rng)
    x.data[:] = 1.0
    w = rng.standard_normal((args.items, args.items)) / args.items
    scores = kernels.score_rows_numpy(x.indptr, x.indices, x.data, w, True)
    ranked = kernels.topk_rows_numpy(scores, args.k)
    # Denser graph so the k-core peel has work to do.
    ku = rng.integers(0, args.users * 5, size=x.nnz * 10)
    ki = np.minimum(rng.zipf(1.6, size=ku.size) - 1, args.items * 5 - 1)

    cases = {
        "score_rows": lambda impl: impl(x.indptr, x.indices, x.data, w, True),
        "topk_rows": lambda impl: impl(scores, args.k),
        "hit_matrix": lambda impl: impl(ranked, x.indptr, x.indices, args.items),
        "kcore_mask": lambda impl: impl(ku, ki, args.users * 5, args.items * 5, 10),
    }
    print(f"# users={args.users} items={args.items} nnz={x.nnz} k={args.k} "
          f"kcore_edges={ku.size}")
    print("kernel\tnumpy_ms\tnumba_ms\tspeedup\tsame_result")
    for name, call in cases.items():
        np_impl = getattr(kernels, f"{name}_numpy")
        nb_impl = getattr(kernels, f"{name}_numba")
        a, b = call(np_impl), call(nb_impl)
        same = np.array_equal(a, b) if a.dtype == bool or a.dtype.kind == "i" \
            else np.allclose(a, b, rtol=1e-12, atol=1e-12)
        t_np = best_of(lambda: call(np_impl), args.repeat)
        t_nb = best_of(lambda: call(nb_impl), args.repeat)
        print(f"{name}\t{t_np * 1e3:.2f}\t{t_nb * 1e3:.2f}\t{t_np / t_nb:.1f}x\t{same}")


if __name__ == "__main__":
    main()

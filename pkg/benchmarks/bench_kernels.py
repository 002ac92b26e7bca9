"""Numba vs numpy backends of the two hot kernels (OMP sparse coding, LDPC BP).

    python3 benchmarks/bench_kernels.py [--repeat 5] [--quick]

Both backends must return the same answer on the same input; the script
checks that before timing.  Also times sparse_code against Ka for the
optimized and the upper-bound atom budgets (log-log slope printed).
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from ura_sim import _accel
from ura_sim.dictlearn import atom_budget, sparse_code
from ura_sim.fec import ldpc_decode_bp, ldpc_encode, make_ldpc
from ura_sim.phy import complex_gaussian, qpsk_demod_llr, qpsk_modulate


def best_of(fn, repeat):
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return min(ts)


def omp_case(M, K, L, m, rng):
    D = complex_gaussian((M, K), rng)
    D /= np.linalg.norm(D, axis=0)
    Y = complex_gaussian((M, L), rng)
    return lambda: sparse_code(D, Y, m)


def bp_case(B, frames, snr_db, rng):
    code = make_ldpc(B, 0.5, rng)
    bits = rng.integers(0, 2, size=(frames, B), dtype=np.uint8)
    s = qpsk_modulate(ldpc_encode(code, bits))
    nv = 10 ** (-snr_db / 10)
    y = s + complex_gaussian(s.shape, rng, nv)
    llr = qpsk_demod_llr(y, nv)
    return lambda: ldpc_decode_bp(code, llr)


def compare(name, fn, repeat):
    out = {}
    res = {}
    for b in ("numba", "numpy"):
        _accel.set_backend(b)
        res[b] = fn()          # warm-up (and JIT compile)
        out[b] = best_of(fn, repeat)
    a, c = res["numba"], res["numpy"]
    if hasattr(a, "bits"):
        same = np.array_equal(a.bits, c.bits) and np.array_equal(a.parity_errors, c.parity_errors)
    else:
        same = np.allclose(a, c, atol=1e-9)
    print(f"{name:34s} numba {out['numba'] * 1e3:9.2f} ms   numpy {out['numpy'] * 1e3:9.2f} ms"
          f"   speedup {out['numpy'] / out['numba']:6.2f}x   agree={same}")
    return out


def scaling(repeat, kas=(10, 20, 40, 80), M=80, K=80, L=400, S=10):
    _accel.set_backend("numba" if _accel.HAVE_NUMBA else "numpy")
    rng = np.random.default_rng(1)
    D = complex_gaussian((M, K), rng)
    D /= np.linalg.norm(D, axis=0)
    Y = complex_gaussian((M, L), rng)
    sparse_code(D, Y, 2)
    rows = []
    for ka in kas:
        t_up = best_of(lambda: sparse_code(D, Y, ka), repeat)
        m = atom_budget(ka, S, L)
        t_opt = best_of(lambda: sparse_code(D, Y, m), repeat)
        rows.append((ka, m, t_opt, t_up))
        print(f"Ka={ka:3d}  optimized m={m:2d} {t_opt * 1e3:8.2f} ms   upper m={ka:3d} {t_up * 1e3:8.2f} ms")
    x = np.log([r[0] for r in rows])
    for j, label in ((2, "optimized"), (3, "upper")):
        slope = np.polyfit(x, np.log([r[j] for r in rows]), 1)[0]
        print(f"  log-log slope {label:9s} {slope:5.2f}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="small sizes only")
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        print("numba not installed; only the numpy backend is available")
        return
    rng = np.random.default_rng(0)
    sizes = [(32, 20, 400, 1), (32, 20, 400, 20)] if args.quick else \
        [(32, 20, 400, 1), (32, 20, 400, 20), (64, 100, 1600, 3), (64, 100, 1600, 30)]
    for M, K, L, m in sizes:
        compare(f"sparse_code M={M} K={K} L={L} m={m}", omp_case(M, K, L, m, rng), args.repeat)
    for B, frames in ([(10, 200)] if args.quick else [(10, 200), (40, 400), (40, 2000)]):
        compare(f"ldpc_decode_bp B={B} frames={frames}", bp_case(B, frames, 1.0, rng), args.repeat)
    print()
    scaling(args.repeat)


if __name__ == "__main__":
    main()

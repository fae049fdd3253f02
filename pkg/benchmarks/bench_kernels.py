"""Time the numba kernels against the pure-numpy fallback and check they agree.

    python benchmarks/bench_kernels.py [--repeat 3] [--size small|medium]
"""
import argparse
import math
import time

import numpy as np

from kickratchet import kernels
from kickratchet.params import Params, SeedLineage, derive_seed
from kickratchet.quantum import HilbertSpec, _Dissipator
from kickratchet.rng import substream

SIZES = {
    # ensemble, steps, ulam columns, n_tr, hilbert N, rk4 substeps
    "small": (20_000, 100, 256, 1_000, 64, 50),
    "medium": (100_000, 200, 1024, 10_000, 216, 200),
}


def best_time(fn, repeat):
    out = fn()  # warm-up, includes JIT compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(size):
    n_ens, steps, ncol, n_tr, n_dim, substeps = SIZES[size]
    P = Params.from_rescaled(5.0, 0.5)
    sigma = P.noise_sigma_n
    rng = np.random.default_rng(1)
    x0 = rng.uniform(0, 2 * math.pi, n_ens)
    n0 = rng.uniform(-math.pi, math.pi, n_ens) / P.tau
    keys = substream(np.uint64(derive_seed(SeedLineage(7))), np.arange(n_ens, dtype=np.uint64))
    m = 128
    lo, hi = P.p_bounds()
    spec = HilbertSpec.covering(P) if n_dim == 216 else HilbertSpec(n_dim)
    kraus = _Dissipator(P.gamma, spec, "kraus")
    rk4 = _Dissipator(P.gamma, spec, "rk4", substeps)
    a = rng.normal(size=(spec.n_dim, spec.n_dim)) + 1j * rng.normal(size=(spec.n_dim, spec.n_dim))
    rho = a @ a.conj().T
    rho /= np.trace(rho)
    quad = np.ascontiguousarray(rho[spec.zero_index:, spec.zero_index:])

    yield ("evolve_points", f"{n_ens} traj x {steps} steps",
           lambda mod: mod.evolve_points(x0, n0, keys, 0, steps, P.k, P.gamma, P.tau, P.a, P.phi,
                                         sigma, 1e6)[2])
    yield ("ulam_block", f"{ncol} cols x {n_tr} samples",
           lambda mod: np.sort(mod.ulam_block(0, ncol, m, lo - 3, hi + 3, n_tr, 12345, P.k, P.gamma,
                                              P.tau, P.a, P.phi, sigma)[2]))
    yield ("damp_quadrant", f"{quad.shape[0]}^2 quadrant",
           lambda mod: mod.damp_quadrant(quad, kraus.alpha_pos))
    yield ("dissipate_rk4", f"N={spec.n_dim}, {substeps} substeps",
           lambda mod: mod.dissipate_rk4(rho, rk4.decay, rk4.feed_pos, rk4.feed_neg, substeps))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--size", choices=sorted(SIZES), default="small")
    args = parser.parse_args(argv)

    nb, npy = kernels.load("numba"), kernels.load("numpy")
    print(f"{'kernel':<15} {'workload':<28} {'numpy s':>9} {'numba s':>9} {'speedup':>8} {'med diff':>10}")
    for name, label, fn in cases(args.size):
        t_np, r_np = best_time(lambda: fn(npy), args.repeat)
        t_nb, r_nb = best_time(lambda: fn(nb), args.repeat)
        # median, not max: libm rounding differences grow along chaotic trajectories
        diff = float(np.median(np.abs(np.asarray(r_np) - np.asarray(r_nb))))
        print(f"{name:<15} {label:<28} {t_np:9.4f} {t_nb:9.4f} {t_np / t_nb:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()

"""Time the numba kernels against their pure-numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is called once first so compilation is excluded.  The last block
times a whole end-to-end call in two fresh interpreters, one per backend
(``SNGRC_NO_NUMBA=0`` / ``1``), so dispatch through the public API is covered too.
"""

import argparse
import itertools
import os
import subprocess
import sys
import timeit

import numpy as np

from sngrc import kernels


def lasso_problem(p=4, m=1200, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(m, p))
    y = z @ rng.normal(size=p) + 0.1 * rng.normal(size=m)
    return (z.T @ z) / m, (z.T @ y) / m, float(y @ y) / m


def cases():
    rng = np.random.default_rng(1)
    lin = rng.normal(size=(2000, 4))
    idx = np.array(list(itertools.combinations_with_replacement(range(4), 3)))
    gram, corr, yy = lasso_problem()
    beta0 = np.zeros(4)
    samples = rng.normal(size=1500)
    grid = np.linspace(-4, 4, 512)
    return [
        ("monomials 2000x20", kernels.monomial_products_loop, kernels.monomial_products_numpy, (lin, idx)),
        ("monomials 1 row", kernels.monomial_products_loop, kernels.monomial_products_numpy, (lin[:1], idx)),
        ("lasso cd p=4", kernels.lasso_cd_loop, kernels.lasso_cd_numpy,
         (gram, corr, yy, 1e-3, beta0, 10_000, 1e-10, False)),
        ("kde 1500 on 512", kernels.gaussian_kde_eval_loop, kernels.gaussian_kde_eval_numpy, (samples, grid, 0.2)),
    ]


def best_of(func, args, repeat):
    func(*args)
    number, _ = timeit.Timer(lambda: func(*args)).autorange()
    return min(timeit.repeat(lambda: func(*args), number=number, repeat=repeat)) / number


END_TO_END = ("import time; from sngrc.eeg import surrogate_series; from sngrc.sysid import fit_sde;"
              "x = surrogate_series(0); fit_sde(x[:300], 0.0625); t = time.perf_counter();"
              "fit_sde(x, 0.0625); print(time.perf_counter() - t)")


def end_to_end(flag):
    env = dict(os.environ, SNGRC_NO_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    print(f"{'kernel':<20} {'numba':>12} {'numpy':>12} {'speedup':>8}")
    for name, loop, vec, call_args in cases():
        t_loop = best_of(loop, call_args, args.repeat)
        t_vec = best_of(vec, call_args, args.repeat)
        print(f"{name:<20} {t_loop * 1e6:>10.1f}us {t_vec * 1e6:>10.1f}us {t_vec / t_loop:>7.1f}x")

    t_nb, t_np = end_to_end("0"), end_to_end("1")
    print(f"{'fit_sde 1500 pts':<20} {t_nb * 1e3:>10.1f}ms {t_np * 1e3:>10.1f}ms {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()

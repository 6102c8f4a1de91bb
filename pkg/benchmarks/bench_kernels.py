"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Inputs are sized like the production workloads: the working-point layout PMF
on a 512^2 grid's worth of mismatch values, greedy tracking over a 30 mm
crystal, and permanents of the multi-pair network blocks.
"""

import argparse
import timeit

import numpy as np

from spdc_forge import _pykernels, kernels

try:
    from spdc_forge import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    n_dom = 1300
    step = 0.5e-6
    idx = np.cumsum(rng.integers(20, 70, n_dom)).astype(np.int64)
    z0 = -idx[-1] * step / 2
    coeff = rng.choice([-2.0, 2.0], n_dom)
    dk = np.linspace(-3e5, 3e5, 512 * 8)
    z = z0 + idx * step

    n_steps = 60000
    deltas = np.exp(1j * rng.uniform(0, 2 * np.pi, n_steps)) * 1e-7
    targets = np.cumsum(deltas * rng.choice([-1, 1], n_steps))

    mats = {n: rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)) for n in (6, 10, 14)}

    yield "pmf_sum", lambda m: m.pmf_sum(dk, z, coeff)
    yield "pmf_sum_lattice", lambda m: m.pmf_sum_lattice(dk, z0, step, idx, coeff)
    yield "track_signs", lambda m: m.track_signs(deltas, targets, 4)
    for n, a in mats.items():
        yield f"permanent {n}x{n}", lambda m, a=a: m.permanent(a)


def best_of(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.2 and number < 1000:
        number *= 2
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    print(f"active backend: {kernels.BACKEND}")
    if _ckernels is None:
        print("compiled extension not built; timing the numpy fallback only")
    print(f"{'kernel':<20}{'numpy (ms)':>12}{'cython (ms)':>13}{'speed-up':>10}")
    for name, call in cases(np.random.default_rng(args.seed)):
        t_py = best_of(lambda: call(_pykernels), args.repeat) * 1e3
        if _ckernels is None:
            print(f"{name:<20}{t_py:>12.3f}{'-':>13}{'-':>10}")
            continue
        t_c = best_of(lambda: call(_ckernels), args.repeat) * 1e3
        print(f"{name:<20}{t_py:>12.3f}{t_c:>13.3f}{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()

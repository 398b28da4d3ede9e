"""Time the monotone-subnet kernels: compiled extension against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from mmc_irt import kernels
from mmc_irt.models import softplus

SHAPES = [  # (batch, items, options, depth)
    (128, 20, 4, 1),
    (128, 80, 5, 3),
    (1024, 80, 5, 3),
    (256, 40, 4, 7),
]


def _inputs(batch, items, options, depth, seed=0):
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=batch)
    weights = [softplus(rng.normal(size=(items, options, 3)))]
    weights += [softplus(rng.normal(size=(items, options, 3, 3))) for _ in range(depth - 1)]
    biases = [rng.normal(size=(items, options, 3)) for _ in range(depth)]
    grad = rng.normal(size=(batch, items, options))
    return theta, weights, biases, grad


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)} (default {kernels.BACKEND})")
    print(f"{'batch':>6} {'items':>6} {'opts':>5} {'depth':>6} {'backend':>8} {'fwd ms':>9} {'bwd ms':>9}")
    for shape in SHAPES:
        theta, weights, biases, grad = _inputs(*shape)
        for backend in backends:
            fwd = min(timeit.repeat(lambda: kernels.subnet_forward(theta, weights, biases, backend=backend),
                                    number=1, repeat=args.repeat))
            bwd = min(timeit.repeat(
                lambda: kernels.subnet_backward(grad, theta, weights, biases, backend=backend),
                number=1, repeat=args.repeat))
            print(f"{shape[0]:>6} {shape[1]:>6} {shape[2]:>5} {shape[3]:>6} {backend:>8} "
                  f"{fwd * 1e3:>9.3f} {bwd * 1e3:>9.3f}")


if __name__ == "__main__":
    main()

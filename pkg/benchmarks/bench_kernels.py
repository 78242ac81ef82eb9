"""Benchmark the compiled kernels against the numpy fallback.

Times the individual convolution/pooling kernels at the CNN's layer shapes and
a full loss-plus-gradient step for both architectures, on every backend that
is built. Run from the repository root:

    python benchmarks/bench_kernels.py [--batch 10] [--reps 20]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from flhc import kernels
from flhc.model import FAST_MLP, PAPER_CNN, Model, ModelSpec


def timeit(fn, reps: int) -> float:
    """Median of per-call times; robust to the scheduler on shared machines."""
    fn()  # warm-up
    samples = []
    for _ in range(reps):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return float(np.median(samples)) * 1_000


def kernel_cases(batch: int):
    rng = np.random.default_rng(0)
    # layer shapes of the 28x28 CNN: 1->32 at 28x28, then 32->64 at 14x14
    conv1 = dict(
        x=rng.standard_normal((batch, 28, 28, 1)),
        w=rng.standard_normal((5, 5, 1, 32)),
        b=rng.standard_normal(32),
        dy=rng.standard_normal((batch, 28, 28, 32)),
    )
    conv2 = dict(
        x=rng.standard_normal((batch, 14, 14, 32)),
        w=rng.standard_normal((5, 5, 32, 64)),
        b=rng.standard_normal(64),
        dy=rng.standard_normal((batch, 14, 14, 64)),
    )
    pool = rng.standard_normal((batch, 28, 28, 32))
    return conv1, conv2, pool


def benchmark_rows(batch: int):
    conv1, conv2, pool = kernel_cases(batch)
    rows = [
        ("conv 1->32 fwd", lambda: kernels.conv2d_forward(conv1["x"], conv1["w"], conv1["b"]), 1),
        ("conv 1->32 bwd", lambda: kernels.conv2d_backward(conv1["x"], conv1["w"], conv1["dy"]), 1),
        ("conv 32->64 fwd", lambda: kernels.conv2d_forward(conv2["x"], conv2["w"], conv2["b"]), 1),
        ("conv 32->64 bwd", lambda: kernels.conv2d_backward(conv2["x"], conv2["w"], conv2["dy"]), 1),
        ("maxpool fwd", lambda: kernels.maxpool2_forward(pool), 1),
    ]
    rng = np.random.default_rng(1)
    for label, spec, divisor in (
        ("cnn step", ModelSpec(PAPER_CNN, (28, 28, 1), 10), 4),
        ("mlp step", ModelSpec(FAST_MLP, (28, 28, 1), 10, hidden_units=128), 1),
    ):
        model = Model(spec)
        values = model.init_parameters(0).values
        images = rng.random((batch, 28, 28, 1))
        labels = rng.integers(0, 10, batch)
        rows.append(
            (label, lambda m=model, v=values, x=images, y=labels: m.loss_and_gradient(v, x, y), divisor)
        )
    return rows


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=10)
    parser.add_argument("--reps", type=int, default=20)
    args = parser.parse_args()

    backends = kernels.available_backends()
    previous = kernels.get_backend()
    results: dict[str, dict[str, float]] = {name: {} for name in backends}
    try:
        # alternate backends per row so machine noise hits both equally
        for label, fn, divisor in benchmark_rows(args.batch):
            for name in backends:
                kernels.set_backend(name)
                results[name][label] = timeit(fn, max(3, args.reps // divisor))
    finally:
        kernels.set_backend(previous)

    width = max(len(k) for k in next(iter(results.values())))
    header = f"{'kernel':<{width}}" + "".join(f"  {name:>12}" for name in backends)
    if len(backends) == 2:
        header += f"  {'speedup':>8}"
    print(f"batch={args.batch}, reps={args.reps}, median times in ms")
    print(header)
    for row in next(iter(results.values())):
        line = f"{row:<{width}}" + "".join(f"  {results[name][row]:>10.3f}ms" for name in backends)
        if len(backends) == 2:
            line += f"  {results['python'][row] / results['compiled'][row]:>7.2f}x"
        print(line)


if __name__ == "__main__":
    main()

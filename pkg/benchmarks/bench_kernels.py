"""Time the numba and numpy kernel backends on training-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 5] [--batch 320]

The default shapes match one ConvNP decoder pass at batch 16 with 20 latent
draws on the Matern grid (385 nodes, 64 channels, width-15 kernels).
"""

import argparse
import time

import numpy as np

from npforge import _kernels as K


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(batch, nodes, channels, width, rng):
    x = rng.normal(size=(batch, nodes, channels))
    w = rng.normal(size=(width, channels))
    g = rng.normal(size=x.shape)
    xi = np.broadcast_to(np.linspace(-3, 3, nodes), (batch // 20 or 1, nodes)).copy()
    xo = rng.uniform(-2, 2, size=(xi.shape[0], 50))
    v = rng.normal(size=(batch, nodes, 1))
    gv = rng.normal(size=(batch, 50, 1))
    ls = np.array([2.0 / 64])
    return {
        "depthwise fwd": lambda: K.depthwise_conv1d_forward(x, w),
        "depthwise bwd": lambda: K.depthwise_conv1d_backward(x, w, g),
        "rbf smooth fwd": lambda: K.rbf_setconv_forward(xi, v, xo, ls),
        "rbf smooth bwd": lambda: K.rbf_setconv_backward(xi, v, xo, ls, gv),
        "leaky relu fwd": lambda: K.leaky_relu_forward(x, 0.1),
        "leaky relu bwd": lambda: K.leaky_relu_backward(x, g, 0.1),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=320)
    ap.add_argument("--nodes", type=int, default=385)
    ap.add_argument("--channels", type=int, default=64)
    ap.add_argument("--width", type=int, default=15)
    args = ap.parse_args()
    if K.numba is None:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    fns = cases(args.batch, args.nodes, args.channels, args.width, rng)
    print(f"{'kernel':<16}{'numba [ms]':>12}{'numpy [ms]':>12}{'speed-up':>10}")
    prev = K.backend()
    try:
        for name, fn in fns.items():
            K.set_backend("numba")
            t_nb = best_of(fn, args.repeat)
            K.set_backend("numpy")
            t_np = best_of(fn, args.repeat)
            print(f"{name:<16}{1e3 * t_nb:>12.1f}{1e3 * t_np:>12.1f}{t_np / t_nb:>9.1f}x")
    finally:
        K.set_backend(prev)


if __name__ == "__main__":
    main()

"""Compare the numba and numpy kernel backends on FK, FK backward, IK and override FK.

Usage: python benchmarks/bench_kernels.py [--frames N] [--repeats R] [--seed S]

Each kernel is run once untimed (numba compilation), then timed ``repeats``
times; the best time is reported. Outputs of the two backends are compared
so a speedup never hides a disagreement.
"""
import argparse
import time

import numpy as np

from kinefuse import _accel
from kinefuse import kinelayers as kl
from kinefuse import skeleton as sk
from kinefuse.checks import random_params
from kinefuse.metrics import format_table


def best_time(fn, repeats):
    fn()
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--frames", type=int, default=20000)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    tree, rest = sk.load_skeleton()
    rng = np.random.default_rng(args.seed)
    T, q = random_params(rng, tree, rest, args.frames)
    pos = kl.fk_batch(T, q, rest, tree, backend="numpy")
    upstream = rng.standard_normal(pos.shape)
    G = kl.fk_batch(T, q, rest, tree, backend="numpy", return_global=True)[1]
    mask = np.zeros(q.shape[:2], dtype=bool)
    mask[:, [tree.sensor_joint[k] for k in tree.sensors]] = True

    cases = {
        "fk": lambda b: kl.fk_batch(T, q, rest, tree, backend=b),
        "fk_backward": lambda b: kl.fk_backward_batch(T, q, upstream, rest, tree, backend=b)[1],
        "ik": lambda b: kl.ik_batch(pos, rest, tree, backend=b)[1],
        "fk_override": lambda b: kl.fk_override_batch(T, q, G, mask, rest, tree, backend=b),
        "fk_override_backward": lambda b: kl.fk_override_backward_batch(T, q, G, mask, upstream, rest, tree,
                                                                        backend=b),
    }
    backends = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])
    rows = []
    for name, fn in cases.items():
        times = {b: best_time(lambda: fn(b), args.repeats) for b in backends}
        if "numba" in times:
            diff = float(np.max(np.abs(fn("numba") - fn("numpy"))))
            rows.append([name, times["numpy"] * 1e3, times["numba"] * 1e3, times["numpy"] / times["numba"], diff])
        else:
            rows.append([name, times["numpy"] * 1e3, float("nan"), float("nan"), 0.0])
    print(f"{args.frames} frames, {tree.joint_count} joints, best of {args.repeats}")
    print(format_table(["kernel", "numpy_ms", "numba_ms", "speedup", "max_abs_diff"], rows))
    if not _accel.HAVE_NUMBA:
        print("numba not installed: only the numpy backend was timed")


if __name__ == "__main__":
    main()

"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each row reports the best-of-``repeat`` mean time per call for both backends
and the speedup of the compiled one.
"""

import argparse
import sys
import timeit

import numpy as np

from irpm import _backend, _kernels_py
from irpm.data import make_synthetic_dataset
from irpm.grpo import GRPOConfig, TrainState, irpm_train_step
from irpm.rewards import RewardConfig


def kernel_cases(rng):
    small_c, small_r = rng.uniform(0, 10, 4), rng.uniform(0, 10, 4)
    big_c, big_r = rng.uniform(0, 10, 1024), rng.uniform(0, 10, 1024)
    logits, fl = rng.normal(size=(201, 21)), rng.normal(size=201)
    n = 768
    rows, bins, ok = rng.integers(0, 201, n), rng.integers(0, 21, n), rng.integers(0, 2, n)
    lb, lv, lo = _kernels_py.log_probs(logits, fl, 1.0)
    old_f = np.where(ok == 1, lo[rows], lv[rows]) - 0.05
    old_b = lb[rows, bins] + 0.05
    surrogate_args = (logits, fl, rows, bins, ok, rng.normal(size=n), np.full(n, 1 / n),
                      old_f, old_b, old_f, old_b, 1.0, 0.2, 1e-3, True)
    return {
        "intergroup_sigmoid G=4": ("intergroup_sigmoid", (small_c, small_r, 1.0)),
        "intergroup_sigmoid G=1024": ("intergroup_sigmoid", (big_c, big_r, 1.0)),
        "intergroup_indicator G=1024": ("intergroup_indicator", (big_c, big_r)),
        "threshold_rewards G=4": ("threshold_rewards", (small_c, small_r, 4.0, 6.0, 0.0)),
        "log_probs 201x21": ("log_probs", (logits, fl, 1.0)),
        "surrogate_objective 768 rollouts": ("surrogate_objective", surrogate_args),
    }


def best(stmt, repeat, number):
    return min(timeit.repeat(stmt, repeat=repeat, number=number)) / number


def calibrate(stmt):
    number = 1
    while timeit.timeit(stmt, number=number) < 0.05:
        number *= 4
    return number


def train_step_timer(backend):
    task = make_synthetic_dataset(200, 0, utility_noise=0.5)

    def run():
        _backend.set_backend(backend)
        state = TrainState.initial(task.pairs)
        for _ in range(5):
            irpm_train_step(state, task.pairs[:96], RewardConfig(), GRPOConfig(), 0)

    return run


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if "cython" not in _backend.AVAILABLE:
        sys.exit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    from irpm import _kernels

    rng = np.random.default_rng(0)
    print(f"{'case':36s} {'python':>12s} {'cython':>12s} {'speedup':>8s}")
    for label, (fn, fargs) in kernel_cases(rng).items():
        times = []
        for mod in (_kernels_py, _kernels):
            f = getattr(mod, fn)
            stmt = lambda f=f: f(*fargs)  # noqa: E731
            times.append(best(stmt, args.repeat, calibrate(stmt)))
        print(f"{label:36s} {times[0] * 1e6:10.1f}us {times[1] * 1e6:10.1f}us {times[0] / times[1]:7.1f}x")

    previous = _backend.name
    times = [best(train_step_timer(b), max(1, args.repeat // 2), 1) / 5 for b in ("python", "cython")]
    _backend.set_backend(previous)
    print(f"{'train step (96 pairs, G=4)':36s} {times[0] * 1e3:10.2f}ms {times[1] * 1e3:10.2f}ms "
          f"{times[0] / times[1]:7.1f}x")


if __name__ == "__main__":
    main()

"""Time the compiled and pure-numpy sequence kernels on a full-cycle workload.

Usage: python3 benchmarks/bench_kernels.py [--cycles N] [--repeat R]
"""

import argparse
import time

import numpy as np

from pbsim import clifford, kernels
from pbsim.noise import Miscalibration, ScenarioConfig, gate_channel
from pbsim.protocol import DEFAULT_M_SET, fused_maps
from pbsim.qubit import GROUND_AXIS


def workload(cycles, seed=0):
    """One channel per cycle, one random sequence per default length."""
    rng = np.random.default_rng(seed)
    sc = ScenarioConfig(miscalibration=Miscalibration(overrotation=0.03))
    ch = gate_channel(sc, sc.operating_points[0])
    fused = np.repeat(fused_maps(ch)[None], cycles, axis=0)
    shift = np.repeat(ch.t[None], cycles, axis=0)
    lengths = np.tile(DEFAULT_M_SET, cycles)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    gates = clifford.sample_indices(rng, int(offsets[-1])).astype(np.int64)
    channel_of = np.repeat(np.arange(cycles), len(DEFAULT_M_SET)).astype(np.int64)
    return gates, offsets, channel_of, fused, shift


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args, GROUND_AXIS)
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--cycles", type=int, default=2000)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    data = workload(args.cycles)
    n_gates = data[0].size
    t_py, out_py = best_of(kernels.python_evolve, data, args.repeat)
    print(f"gates per run: {n_gates}")
    print(f"python  : {t_py * 1e3:9.2f} ms  ({n_gates / t_py / 1e6:6.2f} Mgates/s)")
    if kernels.compiled_evolve is None:
        print("compiled: not built")
        return
    t_c, out_c = best_of(kernels.compiled_evolve, data, args.repeat)
    print(f"compiled: {t_c * 1e3:9.2f} ms  ({n_gates / t_c / 1e6:6.2f} Mgates/s)")
    print(f"speedup : {t_py / t_c:.1f}x, max abs difference {np.max(np.abs(out_py - out_c)):.1e}")


if __name__ == "__main__":
    main()

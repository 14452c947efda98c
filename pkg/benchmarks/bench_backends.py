"""Timing comparison of the compiled and pure-numpy kernel backends.

Measures the two hot paths behind calibration and simulation: the
one-step acceleration RMSE over a trajectory, and a full follower
rollout. The compiled backend is warmed up before timing so JIT
compilation never lands inside a measurement.

Run:

    python benchmarks/bench_backends.py
    python benchmarks/bench_backends.py --n-obs 2000 --n-steps 5000
"""

import argparse
import time

import numpy as np

from microtraffic import _kernels
from microtraffic.idm import FollowingState, ParamSet, rollout_follower

THETA = ParamSet(a_max=3.0, a_comf=5.0, v_des=35.0, d_min=10.0, T=2.0,
                 delta=4.0)


def best_of(fn, repeat: int) -> float:
    """Smallest wall-clock time of ``repeat`` calls, in seconds."""
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def make_states(n_obs: int):
    lead = np.tile(np.repeat([28.0, 16.0, 24.0, 32.0], 50), n_obs // 200 + 1)
    traj = rollout_follower(THETA, lead[:n_obs],
                            FollowingState(v=20.0, delta_v=0.0, d_front=35.0),
                            dt=0.1, n_steps=n_obs)
    return traj.v_ego, traj.v_ego - traj.v_leader, traj.gap, traj.a_obs


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n-obs", type=int, default=200,
                        help="trajectory length for the RMSE kernel")
    parser.add_argument("--n-steps", type=int, default=2000,
                        help="horizon for the rollout kernel")
    parser.add_argument("--repeat", type=int, default=200,
                        help="calls per measurement (best-of)")
    args = parser.parse_args()

    theta = THETA.to_array()
    v, delta_v, gap, a_obs = make_states(args.n_obs)
    lead = np.full(args.n_steps, 25.0)
    v_out = np.empty(args.n_steps)
    gap_out = np.empty(args.n_steps)
    a_out = np.empty(args.n_steps)

    backends = _kernels.available_backends()
    print(f"active backend: {_kernels.ACTIVE.name}")
    print(f"rmse kernel: {args.n_obs} observations; "
          f"rollout kernel: {args.n_steps} steps; best of {args.repeat}\n")

    results = {}
    for be in backends:
        # Warm-up call compiles the jitted path and touches the caches.
        be.rmse_one_step(theta, v, delta_v, gap, a_obs)
        be.rollout(theta, lead, 25.0, 80.0, 0.1, v_out, gap_out, a_out)

        t_rmse = best_of(
            lambda: be.rmse_one_step(theta, v, delta_v, gap, a_obs),
            args.repeat)
        t_roll = best_of(
            lambda: be.rollout(theta, lead, 25.0, 80.0, 0.1,
                               v_out, gap_out, a_out),
            args.repeat)
        results[be.name] = (t_rmse, t_roll)
        print(f"{be.name:>6}  rmse_one_step {t_rmse * 1e6:10.1f} us"
              f"   rollout {t_roll * 1e6:10.1f} us")

    if len(results) == 2 and "numba" in results and "numpy" in results:
        rmse_speedup = results["numpy"][0] / results["numba"][0]
        roll_speedup = results["numpy"][1] / results["numba"][1]
        print(f"\nnumba speedup: rmse_one_step x{rmse_speedup:.1f}, "
              f"rollout x{roll_speedup:.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

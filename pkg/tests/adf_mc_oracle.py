"""Monte Carlo oracle for the unit-root classification thresholds.

Run manually::

    python3 tests/adf_mc_oracle.py

Draws 500 length-2000 random walks and 500 white-noise series, computes
the unit-root statistic of each, and prints summary percentiles. The
classification thresholds frozen into the acceptance suite — the
random-walk 95th percentile and the white-noise 5th percentile — come
from this script's output; rerun it after any change to the statistic
implementation and update those constants if they drift.
"""

from __future__ import annotations

import numpy as np

from destat.metrics import adf_statistic

N_SEEDS = 500
T_LEN = 2000
WHITE_NOISE_SEED_BASE = 10_000


def simulate():
    walk_stats = np.empty(N_SEEDS)
    noise_stats = np.empty(N_SEEDS)
    for seed in range(N_SEEDS):
        walk_rng = np.random.default_rng(seed)
        walk_stats[seed] = adf_statistic(
            np.cumsum(walk_rng.standard_normal(T_LEN))
        ).statistic
        noise_rng = np.random.default_rng(WHITE_NOISE_SEED_BASE + seed)
        noise_stats[seed] = adf_statistic(
            noise_rng.standard_normal(T_LEN)
        ).statistic
    return walk_stats, noise_stats


def main():
    walk_stats, noise_stats = simulate()
    for name, stats in (("random_walk", walk_stats),
                        ("white_noise", noise_stats)):
        p5, p50, p95 = np.percentile(stats, [5, 50, 95])
        print(f"{name}: n={len(stats)} mean={stats.mean():.6f} "
              f"p5={p5:.6f} p50={p50:.6f} p95={p95:.6f} "
              f"min={stats.min():.6f} max={stats.max():.6f}")
    print(f"RANDOM_WALK_P95 = {np.percentile(walk_stats, 95):.6f}")
    print(f"WHITE_NOISE_P5 = {np.percentile(noise_stats, 5):.6f}")


if __name__ == "__main__":
    main()

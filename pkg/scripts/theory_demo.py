"""Print the three numerical theory checks: injectivity, max limit, profile recovery."""
import numpy as np

from sanpool.theory import (
    injectivity_check,
    maxlimit_bound,
    maxlimit_convergence_check,
    recover_1d_set,
    relu_profile,
    subsets_universe,
    uniform_grid,
)


def main():
    universe = subsets_universe(10, 2)
    print("injectivity over", len(universe), "two-element subsets")
    for M in (1, 2, 4, 8, 16, 32, 64):
        r = injectivity_check(universe, M, seed=0)
        print(f"  M={M:3d} collisions={r.collisions:4d} min_distance={r.min_pair_distance:.3e}")

    values = np.arange(1, 11, dtype=float)
    ps = [2, 10, 50, 256]
    for mode in ("power", "log-sum-exp"):
        print(f"smooth max error on 1..10 ({mode})")
        for p, err in zip(ps, maxlimit_convergence_check(values, ps, mode)):
            print(f"  p={p:4d} error={err:.6e} bound={maxlimit_bound(values, p, mode):.6e}")

    s = np.array([-3.25, -0.5, -0.5, 1.0, 2.75])
    profile = relu_profile(s, 1.0, uniform_grid(-5, 5, 0.25))
    print("profile recovery of", s.tolist())
    print("  recovered", recover_1d_set(profile, 0.25))


if __name__ == "__main__":
    main()

"""Search a rank-7 decomposition of T_222 on the sphere ||theta||^2 = c.

Every restart starts from a random point on the sphere; the damped
Gauss-Newton iteration then stays on it.  Most restarts reach an exact fit,
the rest stall at a local minimum.
"""

from cpmatmul import SolverConfig, build_matmul_tensor, multi_restart

target = build_matmul_tensor((2, 2, 2))
cfg = SolverConfig(c=36.0, restarts=20, seed=2024, stop_on_exact=False)
res = multi_restart(target, 7, cfg)

for out in res.outcomes:
    print(f"restart {out.restart_index:2d}: {out.status:10s} phi={out.best_phi:.2e} "
          f"after {out.iterations} iterations")

exact = sum(o.exact for o in res.outcomes)
print(f"\n{exact}/{len(res.outcomes)} restarts found an exact fit")

# rank 6 is too small: the cost stays away from zero
low = multi_restart(target, 6, SolverConfig(c=36.0, restarts=5, seed=1))
print(f"rank 6: best phi = {low.best.best_phi:.3e} ({low.best.status})")

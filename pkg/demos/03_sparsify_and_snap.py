"""From a dense float solution to a verified 0/+-1 algorithm.

An exact fit found by the solver is dense.  The symmetry transforms of
T_222 move it along a family of equivalent decompositions toward a sparse
one, after which parameters are frozen one by one at small integers.
"""

from cpmatmul import (
    SolverConfig,
    SnapPlan,
    build_matmul_tensor,
    export_bilinear,
    multi_restart,
    snap_and_refit,
    sparsify_cycle,
    verify_exact,
)
from cpmatmul.sparsify import sparsity_report

dims = (2, 2, 2)
target = build_matmul_tensor(dims)
res = multi_restart(target, 7, SolverConfig(c=36.0, restarts=50, seed=2024))
f = res.best.factors
print("solver output:   ", sparsity_report(f))

sparse = sparsify_cycle(f, dims)
print("after sparsify:  ", sparsity_report(sparse))

snap = snap_and_refit(sparse, target, SnapPlan(), SolverConfig(seed=2024))
print(f"snap: {snap.message}")
if snap.success:
    print(verify_exact(snap.factors, dims).describe())
    print()
    print(export_bilinear(snap.factors, dims).to_text())

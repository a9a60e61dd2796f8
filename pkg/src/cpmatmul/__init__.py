"""CP decompositions of matrix-multiplication tensors.

Build ``T_PQS``, search exact rank-R decompositions with a sphere-constrained
Levenberg-Marquardt method, sparsify and rationalize them, certify them in
exact arithmetic, and export them as bilinear multiplication algorithms.
"""

from .cp import (
    FactorTriple,
    compose,
    from_theta,
    gradient_and_gn_hessian,
    jacobian,
    residual_cost,
    to_theta,
)
from .experiments import SweepSpec, classify_sweep, run_pipeline, run_sweep
from .rational import (
    BilinearProgram,
    SnapPlan,
    export_bilinear,
    run_bilinear,
    snap_and_refit,
    verify_exact,
)
from .solver import (
    RunOutcome,
    SolverConfig,
    constrained_step,
    damping_update,
    multi_restart,
    solve,
)
from .sparsify import SparsifyConfig, l1_objective, nelder_mead_minimize, sparsify_cycle
from .tensor import (
    MatMulDims,
    apply_bilinear,
    build_exact_matmul_tensor,
    build_matmul_tensor,
    cyclic_permute,
    mode_product,
    s1_transform,
    s2_transform,
)

__version__ = "0.1.0"

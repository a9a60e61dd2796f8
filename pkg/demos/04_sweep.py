"""How the best cost depends on the radius c when the rank is too small.

For T_222 at rank 6 no exact fit exists and the border rank is 7, so the
cost cannot reach zero for any c.  A decaying trend in c would instead hint
at a border-rank phenomenon.  Pipe the CSV into any plotting tool.
"""

from cpmatmul import SolverConfig, SweepSpec, run_sweep
from cpmatmul.experiments import geometric_grid
from cpmatmul.tensor import MatMulDims

spec = SweepSpec(MatMulDims(2, 2, 2), 6, geometric_grid(10.0, 1000.0, per_decade=3),
                 restarts_per_c=3, solver=SolverConfig(max_iters=300), seed=5)
res = run_sweep(spec)
print(res.csv())
print("trend:", res.classification["label"])

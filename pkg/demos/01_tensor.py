"""Build T_222 and check it against the schoolbook product.

T_PQS holds a one wherever entry (k, m) of E meets entry (m, n) of F on the
way to entry (k, n) of G = EF.  Contracting it with vec(E^T) and vec(F^T)
therefore has to give vec(EF).
"""

import numpy as np

from cpmatmul import MatMulDims, apply_bilinear, build_matmul_tensor
from cpmatmul.io import table1
from cpmatmul.tensor import vec

dims = MatMulDims(2, 2, 2)
t = build_matmul_tensor(dims)
print(f"T_{dims.label} has shape {t.shape} and {int(t.sum())} ones")

# the four frontal slices, side by side
print(np.hstack([t[:, :, k] for k in range(t.shape[2])]))

rng = np.random.default_rng(0)
e = rng.integers(-9, 10, size=(2, 2))
f = rng.integers(-9, 10, size=(2, 2))
print("E F      =", vec(e @ f))
print("T(E, F)  =", apply_bilinear(t, e, f))

print("\nknown bounds for small cases:")
for row in table1():
    br = row["border_rank"] if row["border_rank"] is not None else "?"
    print(f"  T_{row['acronym']}: rank <= {row['rank']}, border rank {br}")

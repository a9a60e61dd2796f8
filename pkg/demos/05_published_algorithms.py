"""Certify the shipped decompositions and run them as algorithms.

Strassen's seven-product scheme for 2x2 matrices and a fifteen-product
scheme for a 3x3 by 3x2 product are checked in exact rational arithmetic,
then evaluated on integer matrices while counting multiplications.
"""

from collections import Counter

import numpy as np

from cpmatmul import export_bilinear, run_bilinear, verify_exact
from cpmatmul.io import shipped_factors

rng = np.random.default_rng(1)
for name in ("strassen", "t332_r15"):
    f, dims = shipped_factors(name)
    print(verify_exact(f, dims).describe())
    prog = export_bilinear(f, dims)
    e = rng.integers(-9, 10, size=(dims.p, dims.q))
    g = rng.integers(-9, 10, size=(dims.q, dims.s))
    cnt = Counter()
    out = run_bilinear(prog, e, g, cnt)
    print(f"matches E @ F: {np.array_equal(out, e @ g)}, multiplications: {cnt['mul']}")
    print(prog.to_pseudocode())

# g11 of the 15-product scheme, as implied by the C factor
f, dims = shipped_factors("t332_r15")
print(next(line for line in export_bilinear(f, dims).to_text().splitlines() if line.startswith("g11")))

"""Rank-R CP models ``[[A, B, C]]``: reconstruction, cost, Jacobian, Gauss-Newton terms.

Parameter vector layout: ``theta = [vec(A); vec(B); vec(C)]`` with each ``vec``
column-major, so ``A[i, r]`` sits at ``i + r*n1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np


@dataclass
class FactorTriple:
    """Factor matrices of a CP model.

    ``a``, ``b``, ``c`` share their column count (the rank).  Entries are
    float64, or ``Fraction`` objects for exact work.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.a = _as_matrix(self.a)
        self.b = _as_matrix(self.b)
        self.c = _as_matrix(self.c)
        ranks = {self.a.shape[1], self.b.shape[1], self.c.shape[1]}
        if len(ranks) != 1:
            raise ValueError(
                f"factor column counts differ: {self.a.shape}, {self.b.shape}, {self.c.shape}"
            )

    @property
    def rank(self) -> int:
        return self.a.shape[1]

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.a.shape[0], self.b.shape[0], self.c.shape[0])

    @property
    def is_exact(self) -> bool:
        return self.a.dtype == object

    def factors(self):
        return (self.a, self.b, self.c)

    def copy(self) -> "FactorTriple":
        return FactorTriple(self.a.copy(), self.b.copy(), self.c.copy())

    def to_float(self) -> "FactorTriple":
        return FactorTriple(*(np.asarray(m, dtype=float) for m in self.factors()))

    def to_exact(self, max_denominator: int | None = None) -> "FactorTriple":
        """Lift to ``Fraction`` entries (exact binary value unless ``max_denominator``)."""

        def lift(m):
            out = np.empty(m.shape, dtype=object)
            for idx, v in np.ndenumerate(m):
                fr = v if isinstance(v, Fraction) else Fraction(v)
                if max_denominator is not None:
                    fr = fr.limit_denominator(max_denominator)
                out[idx] = fr
            return out

        return FactorTriple(*(lift(m) for m in self.factors()))

    def l1(self) -> float:
        return float(sum(np.abs(np.asarray(m, dtype=float)).sum() for m in self.factors()))


def _as_matrix(m) -> np.ndarray:
    arr = np.asarray(m)
    if arr.dtype != object:
        arr = arr.astype(float)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 0)
    if arr.ndim != 2:
        raise ValueError(f"factor must be a matrix, got shape {arr.shape}")
    return arr


def zeros_triple(shape, rank: int) -> FactorTriple:
    n1, n2, n3 = shape
    return FactorTriple(np.zeros((n1, rank)), np.zeros((n2, rank)), np.zeros((n3, rank)))


def n_params(shape, rank: int) -> int:
    return sum(shape) * rank


def to_theta(f: FactorTriple) -> np.ndarray:
    return np.concatenate([m.reshape(-1, order="F") for m in f.factors()])


def from_theta(theta, shape, rank: int) -> FactorTriple:
    theta = np.asarray(theta)
    if theta.size != n_params(shape, rank):
        raise ValueError(f"theta has {theta.size} entries, expected {n_params(shape, rank)}")
    out = []
    start = 0
    for n in shape:
        stop = start + n * rank
        out.append(theta[start:stop].reshape((n, rank), order="F"))
        start = stop
    return FactorTriple(*out)


def compose(f: FactorTriple) -> np.ndarray:
    """Reconstruct ``sum_r a_r o b_r o c_r``."""
    if f.is_exact:
        return _compose_exact(f)
    if f.rank == 0:
        return np.zeros(f.shape)
    return np.einsum("ir,jr,kr->ijk", f.a, f.b, f.c)


def _compose_exact(f: FactorTriple) -> np.ndarray:
    n1, n2, n3 = f.shape
    out = np.empty((n1, n2, n3), dtype=object)
    out[...] = Fraction(0)
    for r in range(f.rank):
        ar, br, cr = f.a[:, r], f.b[:, r], f.c[:, r]
        ia = [i for i in range(n1) if ar[i] != 0]
        jb = [j for j in range(n2) if br[j] != 0]
        kc = [k for k in range(n3) if cr[k] != 0]
        for i in ia:
            for j in jb:
                ab = ar[i] * br[j]
                for k in kc:
                    out[i, j, k] += ab * cr[k]
    return out


def _check_target(f: FactorTriple, target: np.ndarray):
    if tuple(target.shape) != f.shape:
        raise ValueError(f"factor shapes {f.shape} do not match tensor {target.shape}")


def residual_cost(f: FactorTriple, target: np.ndarray) -> float:
    """Squared Frobenius norm of ``target - compose(f)``."""
    _check_target(f, target)
    d = target - compose(f)
    return float(np.vdot(d, d))


def jacobian(f: FactorTriple, shape=None) -> np.ndarray:
    """Dense Jacobian of ``vec(compose(f))`` with respect to ``theta``.

    Rows follow the column-major ``vec`` of the tensor, columns follow ``theta``.
    """
    if shape is not None and tuple(shape) != f.shape:
        raise ValueError(f"factor shapes {f.shape} do not match {tuple(shape)}")
    a, b, c = f.a, f.b, f.c
    n1, n2, n3 = f.shape
    rk = f.rank
    e1, e2, e3 = np.eye(n1), np.eye(n2), np.eye(n3)
    # d T[i', j, k] / d A[i, r] = delta(i, i') B[j, r] C[k, r]
    ja = np.einsum("pi,jr,kr->pjkir", e1, b, c)
    jb = np.einsum("ir,qj,kr->iqkjr", a, e2, c)
    jc = np.einsum("ir,jr,sk->ijskr", a, b, e3)
    m = n1 * n2 * n3
    return np.hstack([
        ja.reshape((m, n1 * rk), order="F"),
        jb.reshape((m, n2 * rk), order="F"),
        jc.reshape((m, n3 * rk), order="F"),
    ])


def gradient(f: FactorTriple, target: np.ndarray) -> np.ndarray:
    """``J^T vec(compose(f) - target)``, i.e. half the gradient of the cost."""
    _check_target(f, target)
    resid = compose(f) - target
    ga = np.einsum("ijk,jr,kr->ir", resid, f.b, f.c)
    gb = np.einsum("ijk,ir,kr->jr", resid, f.a, f.c)
    gc = np.einsum("ijk,ir,jr->kr", resid, f.a, f.b)
    return np.concatenate([ga.reshape(-1, order="F"), gb.reshape(-1, order="F"), gc.reshape(-1, order="F")])


def gn_hessian(f: FactorTriple) -> np.ndarray:
    """``J^T J`` assembled block-wise from the factor Gram matrices."""
    a, b, c = f.a, f.b, f.c
    n1, n2, n3 = f.shape
    rk = f.rank
    ga, gb, gc = a.T @ a, b.T @ b, c.T @ c
    ia, ib, ic = n1 * rk, n2 * rk, n3 * rk
    h = np.empty((ia + ib + ic,) * 2)
    h[:ia, :ia] = np.kron(gb * gc, np.eye(n1))
    h[ia:ia + ib, ia:ia + ib] = np.kron(ga * gc, np.eye(n2))
    h[ia + ib:, ia + ib:] = np.kron(ga * gb, np.eye(n3))
    # H_AB[(i,r),(j,s)] = B[j,r] A[i,s] (C^T C)[r,s], rows i + r*n1, cols j + s*n2
    hab = np.einsum("jr,is,rs->irjs", b, a, gc).reshape(ia, ib, order="F")
    hac = np.einsum("kr,is,rs->irks", c, a, gb).reshape(ia, ic, order="F")
    hbc = np.einsum("kr,js,rs->jrks", c, b, ga).reshape(ib, ic, order="F")
    h[:ia, ia:ia + ib] = hab
    h[ia:ia + ib, :ia] = hab.T
    h[:ia, ia + ib:] = hac
    h[ia + ib:, :ia] = hac.T
    h[ia:ia + ib, ia + ib:] = hbc
    h[ia + ib:, ia:ia + ib] = hbc.T
    return h


def gradient_and_gn_hessian(f: FactorTriple, target: np.ndarray):
    """Return ``(g, H)`` with ``g = J^T (compose(f) - target)`` and ``H = J^T J``.

    ``g`` is half the gradient of :func:`residual_cost`, so ``-g`` is a descent
    direction.
    """
    return gradient(f, target), gn_hessian(f)

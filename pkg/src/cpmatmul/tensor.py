"""Matrix-multiplication tensors and the transforms that leave them invariant.

Tensors are plain ``numpy.ndarray`` objects of shape ``(n1, n2, n3)``.  When a
tensor is flattened (``vec``) the first index runs fastest, i.e. Fortran order.

Index conventions for ``T_PQS`` (0-based)::

    mode 1:  k*Q + m   <->  E[k, m]   (row-major scan of E)
    mode 2:  m*S + n   <->  F[m, n]   (row-major scan of F)
    mode 3:  n*P + k   <->  G[k, n]   (column-major scan of G)
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

MAX_ENTRIES = 10**8


class TensorSizeError(ValueError):
    """Raised when a requested tensor would exceed the dense size cap."""


class SingularTransformError(ValueError):
    """Raised when a symmetry transform is requested for a singular matrix."""


@dataclass(frozen=True)
class MatMulDims:
    """Sizes of the product ``G = E @ F`` with ``E`` p-by-q and ``F`` q-by-s."""

    p: int
    q: int
    s: int

    def __post_init__(self):
        for name in ("p", "q", "s"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")

    @property
    def shape(self) -> tuple[int, int, int]:
        """Mode sizes ``(p*q, q*s, p*s)`` of the tensor."""
        return (self.p * self.q, self.q * self.s, self.p * self.s)

    @property
    def is_cubic(self) -> bool:
        return self.p == self.q == self.s

    @property
    def label(self) -> str:
        return f"{self.p}{self.q}{self.s}"

    @classmethod
    def parse(cls, text: str) -> "MatMulDims":
        """Parse ``"P,Q,S"`` (also accepts ``"PxQxS"`` and ``"PQS"`` for single digits)."""
        t = text.strip().lower().replace("x", ",")
        if "," in t:
            parts = [int(x) for x in t.split(",") if x]
        elif t.isdigit() and len(t) == 3:
            parts = [int(c) for c in t]
        else:
            raise ValueError(f"cannot parse dims {text!r}; expected P,Q,S")
        if len(parts) != 3:
            raise ValueError(f"expected three sizes, got {text!r}")
        return cls(*parts)

    def __iter__(self):
        return iter((self.p, self.q, self.s))


def _as_dims(dims) -> MatMulDims:
    if isinstance(dims, MatMulDims):
        return dims
    return MatMulDims(*dims)


def build_matmul_tensor(dims, max_entries: int = MAX_ENTRIES) -> np.ndarray:
    """Build the 0/1 tensor ``T_PQS`` of shape ``(PQ, QS, PS)``.

    Parameters
    ----------
    dims : MatMulDims or tuple of int
        ``(P, Q, S)``.
    max_entries : int
        Refuse to allocate tensors with more entries than this.

    Returns
    -------
    numpy.ndarray
        Float64 tensor with exactly ``P*Q*S`` ones.
    """
    dims = _as_dims(dims)
    p, q, s = dims
    n1, n2, n3 = dims.shape
    if n1 * n2 * n3 > max_entries:
        raise TensorSizeError(
            f"T_{dims.label} has {n1 * n2 * n3} entries, cap is {max_entries}"
        )
    t = np.zeros((n1, n2, n3))
    k, m, n = np.meshgrid(np.arange(p), np.arange(q), np.arange(s), indexing="ij")
    t[(k * q + m).ravel(), (m * s + n).ravel(), (n * p + k).ravel()] = 1.0
    return t


def build_exact_matmul_tensor(dims) -> np.ndarray:
    """Same as :func:`build_matmul_tensor` but as an object array of ``Fraction``."""
    t = build_matmul_tensor(dims)
    out = np.empty(t.shape, dtype=object)
    flat = t.ravel()
    out.ravel()[:] = [Fraction(int(v)) for v in flat]
    return out


def vec(x: np.ndarray) -> np.ndarray:
    """Column-major vectorization (first index fastest)."""
    return np.asarray(x).reshape(-1, order="F")


def _check_operands(t, e, f):
    e = np.asarray(e)
    f = np.asarray(f)
    if e.ndim != 2 or f.ndim != 2 or e.shape[1] != f.shape[0]:
        raise ValueError(f"incompatible matrices {e.shape} and {f.shape}")
    p, q = e.shape
    s = f.shape[1]
    expected = (p * q, q * s, p * s)
    if t.shape != expected:
        raise ValueError(f"tensor shape {t.shape} does not match {expected} for E{e.shape} F{f.shape}")
    return e, f


def apply_bilinear(t: np.ndarray, e, f) -> np.ndarray:
    """Contract ``t`` with ``vec(E^T)`` on mode 1 and ``vec(F^T)`` on mode 2.

    For ``t = T_PQS`` this is ``vec(E @ F)`` in column-major order.  Integer and
    object (``Fraction``) inputs stay exact: the contraction only multiplies by
    the tensor entries and sums.
    """
    e, f = _check_operands(t, e, f)
    ev = e.reshape(-1)  # row-major == vec(E^T)
    fv = f.reshape(-1)
    if e.dtype == object or f.dtype == object:
        out = [0] * t.shape[2]
        nz = np.argwhere(t != 0)
        for i, j, k in nz:
            out[k] = out[k] + t[i, j, k] * ev[i] * fv[j]
        return np.array(out, dtype=object)
    if np.issubdtype(e.dtype, np.integer) and np.issubdtype(f.dtype, np.integer):
        ti = t.astype(np.int64)
        return np.einsum("ijk,i,j->k", ti, ev.astype(np.int64), fv.astype(np.int64))
    return np.einsum("ijk,i,j->k", t, ev, fv)


def mode_product(t: np.ndarray, m, mode: int) -> np.ndarray:
    """Mode-``mode`` product ``t x_mode m`` (modes are 1-based).

    ``m`` has shape ``(new_size, t.shape[mode-1])``.
    """
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode}")
    m = np.asarray(m)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2 or m.shape[1] != t.shape[mode - 1]:
        raise ValueError(
            f"matrix with {m.shape[-1]} columns cannot act on mode {mode} of size {t.shape[mode - 1]}"
        )
    spec = {1: "ai,ijk->ajk", 2: "bj,ijk->ibk", 3: "ck,ijk->ijc"}[mode]
    return np.einsum(spec, m, t)


def s1_transform(x, dims) -> np.ndarray:
    """``I_P kron X^T``: mode-1 symmetry of ``T_PQS`` for an invertible Q-by-Q ``X``."""
    dims = _as_dims(dims)
    x = np.asarray(x, dtype=float)
    if x.shape != (dims.q, dims.q):
        raise ValueError(f"X must be {dims.q}x{dims.q}, got {x.shape}")
    return np.kron(np.eye(dims.p), x.T)


def _check_invertible(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"X must be square, got {x.shape}")
    if abs(np.linalg.det(x)) < 1e-12 * max(np.linalg.norm(x), 1e-300):
        raise SingularTransformError("transform matrix is singular")
    return x


def s2_transform(x, dims) -> np.ndarray:
    """``X^{-1} kron I_S``: mode-2 partner of :func:`s1_transform`."""
    dims = _as_dims(dims)
    x = np.asarray(x, dtype=float)
    if x.shape != (dims.q, dims.q):
        raise ValueError(f"X must be {dims.q}x{dims.q}, got {x.shape}")
    x = _check_invertible(x)
    return np.kron(np.linalg.inv(x), np.eye(dims.s))


def cyclic_permute(t: np.ndarray, perm) -> np.ndarray:
    """Permute tensor indices, matlab style: ``perm=(2,3,1)`` puts mode 2 first."""
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != [1, 2, 3]:
        raise ValueError(f"not a permutation of (1,2,3): {perm}")
    return np.transpose(t, [p - 1 for p in perm])


# -- fixture files ----------------------------------------------------------

def tensor_to_fixture(t: np.ndarray) -> dict:
    """Ones-list fixture: ``{"dims": [...], "ones": [[i,j,k], ...]}`` with 1-based indices."""
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("fixture format only holds 0/1 tensors")
    ones = sorted(
        (int(i) + 1, int(j) + 1, int(k) + 1) for i, j, k in np.argwhere(t == 1)
    )
    return {"dims": list(t.shape), "ones": [list(o) for o in ones]}


def tensor_from_fixture(data: dict) -> np.ndarray:
    dims = tuple(int(d) for d in data["dims"])
    if len(dims) != 3 or min(dims) < 1:
        raise ValueError(f"bad fixture dims {data['dims']!r}")
    t = np.zeros(dims)
    for idx in data["ones"]:
        i, j, k = (int(v) - 1 for v in idx)
        t[i, j, k] = 1.0
    return t


def load_tensor_fixture(path) -> np.ndarray:
    return tensor_from_fixture(json.loads(Path(path).read_text()))

"""Sparsify an exact CP decomposition of ``T_PQS`` with its symmetry transforms.

A pair of factors ``(U, V)`` is updated as ``U <- (I kron X^T) U`` and
``V <- (X^{-1} kron I) V`` with ``det X = 1``.  The X minimizing the entrywise
L1 norm of the pair is found by Nelder-Mead.  For ``T_PQS`` the three pairs
are::

    (A, B): X is Q x Q
    (B, C): X is S x S
    (C, A): X is P x P

All three leave the tensor unchanged for any dims; only ``(A, B)`` is used for
non-cubic dims unless ``mode="sandwich"`` is requested.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .cp import FactorTriple, compose, residual_cost
from .tensor import MatMulDims, _as_dims, build_matmul_tensor

log = logging.getLogger(__name__)

PAIRS = (("a", "b"), ("b", "c"), ("c", "a"))


class PreconditionError(ValueError):
    pass


@dataclass
class SparsifyConfig:
    max_sweeps: int = 50
    nm_max_evals: int = 4000
    nm_tol: float = 1e-9
    det_floor: float = 1e-8
    l1_improve_tol: float = 1e-6
    nm_restarts: int = 5
    perturb: float = 0.3
    seed: int = 0
    mode: str = "auto"

    def __post_init__(self):
        if self.mode not in ("auto", "cyclic", "single", "sandwich"):
            raise ValueError(f"unknown mode {self.mode!r}")
        for name in ("max_sweeps", "nm_max_evals", "nm_tol", "det_floor", "l1_improve_tol", "nm_restarts"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


def normalize_det(x: np.ndarray) -> np.ndarray:
    """Scale ``x`` to determinant one.

    For a negative determinant and even size the first row is negated first;
    for odd size the real root is used.
    """
    x = np.array(x, dtype=float)
    n = x.shape[0]
    d = float(np.linalg.det(x))
    if d < 0 and n % 2 == 0:
        x[0] = -x[0]
        d = -d
    root = math.copysign(abs(d) ** (1.0 / n), d)
    return x / root


def _pair_sizes(dims: MatMulDims, pair):
    """``(inner, left, right)``: X size, identity size in S1, identity size in S2."""
    p, q, s = dims
    return {
        ("a", "b"): (q, p, s),
        ("b", "c"): (s, q, p),
        ("c", "a"): (p, s, q),
    }[pair]


def _apply_s1(x, u, left):
    # (I_left kron X^T) u
    n = x.shape[0]
    u3 = u.reshape(left, n, -1)
    return np.einsum("mj,kmr->kjr", x, u3).reshape(u.shape)


def _apply_s2(xinv, v, right):
    # (X^{-1} kron I_right) v
    n = xinv.shape[0]
    v3 = v.reshape(n, right, -1)
    return np.einsum("jm,mnr->jnr", xinv, v3).reshape(v.shape)


def transform_pair(x, u, v, left, right):
    """Apply the determinant-normalized transform ``x`` to a factor pair."""
    xt = normalize_det(x)
    return _apply_s1(xt, u, left), _apply_s2(np.linalg.inv(xt), v, right)


def l1_pair(x, u, v, left, right, det_floor=1e-8) -> float:
    x = np.asarray(x, dtype=float)
    if abs(np.linalg.det(x)) < det_floor:
        return math.inf
    nu, nv = transform_pair(x, u, v, left, right)
    return float(np.abs(nu).sum() + np.abs(nv).sum())


def l1_objective(x, fa, fb, dims, det_floor: float = 1e-8) -> float:
    """L1 norm of ``S1(X~) fa`` plus ``S2(X~) fb`` with ``X~ = X / det(X)^(1/N)``.

    Returns ``inf`` when ``|det X| < det_floor``.
    """
    dims = _as_dims(dims)
    x = np.asarray(x, dtype=float)
    if x.shape != (dims.q, dims.q):
        raise ValueError(f"X must be {dims.q}x{dims.q}")
    return l1_pair(x, np.asarray(fa, float), np.asarray(fb, float), dims.p, dims.s, det_floor)


@dataclass
class NelderMeadResult:
    x: np.ndarray
    fun: float
    nfev: int
    history: list


def nelder_mead_minimize(objective, x0, config: SparsifyConfig | None = None, *,
                         max_evals=None, tol=None, step=0.1) -> NelderMeadResult:
    """Minimize ``objective`` over the entries of ``x0`` (any shape).

    Standard coefficients: reflection 1, expansion 2, contraction 0.5, shrink
    0.5.  The initial simplex perturbs one coordinate of ``x0`` by ``step`` per
    vertex.  When the simplex collapses below ``tol`` it is rebuilt around the
    best vertex, and the search ends once a rebuild gives no gain or the
    evaluation budget is spent.  ``history`` holds the best value after each
    iteration and never increases.
    """
    config = config or SparsifyConfig()
    max_evals = config.nm_max_evals if max_evals is None else max_evals
    tol = config.nm_tol if tol is None else tol
    x0 = np.asarray(x0, dtype=float)
    shape = x0.shape

    nfev = 0

    def fun(v):
        nonlocal nfev
        nfev += 1
        return float(objective(v.reshape(shape)))

    history: list[float] = []
    best_x, best_f = x0.ravel(), fun(x0.ravel())
    # A collapsed simplex is rebuilt around the best vertex until a restart
    # brings no gain; plain Nelder-Mead stalls on nonsmooth objectives.
    while nfev < max_evals:
        x, f = _nm_run(fun, best_x, best_f, step, tol, max_evals, lambda: nfev, history)
        if not f < best_f:
            break
        best_x, best_f = x, f
    if not history or best_f < history[-1]:
        history.append(best_f)
    return NelderMeadResult(best_x.reshape(shape), best_f, nfev, history)


def _nm_run(fun, x0, f0, step, tol, max_evals, used, history):
    n = x0.size
    pts = np.tile(x0, (n + 1, 1))
    for i in range(n):
        pts[i + 1, i] += step
    vals = np.array([f0] + [fun(p) for p in pts[1:]])
    while used() < max_evals:
        order = np.argsort(vals, kind="stable")
        pts, vals = pts[order], vals[order]
        history.append(float(vals[0]))
        if np.max(np.abs(pts[1:] - pts[0])) <= tol:
            break
        centroid = pts[:-1].mean(axis=0)
        worst = pts[-1]
        xr = centroid + (centroid - worst)
        fr = fun(xr)
        if fr < vals[0]:
            xe = centroid + 2.0 * (centroid - worst)
            fe = fun(xe)
            if fe < fr:
                pts[-1], vals[-1] = xe, fe
            else:
                pts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[-2]:
            pts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[-1]:
            xc = centroid + 0.5 * (xr - centroid)
            fc = fun(xc)
            if fc <= fr:
                pts[-1], vals[-1] = xc, fc
                continue
        else:
            xc = centroid + 0.5 * (worst - centroid)
            fc = fun(xc)
            if fc < vals[-1]:
                pts[-1], vals[-1] = xc, fc
                continue
        pts[1:] = pts[0] + 0.5 * (pts[1:] - pts[0])
        vals[1:] = [fun(p) for p in pts[1:]]
    best = int(np.argmin(vals))
    return pts[best].copy(), float(vals[best])


def _best_transform(u, v, inner, left, right, config, rng):
    obj = lambda x: l1_pair(x, u, v, left, right, config.det_floor)  # noqa: E731
    eye = np.eye(inner)
    base = obj(eye)
    best_x, best_val = eye, base
    for k in range(config.nm_restarts):
        x0 = eye if k == 0 else eye + config.perturb * rng.uniform(-1, 1, (inner, inner))
        if not math.isfinite(obj(x0)):
            continue
        res = nelder_mead_minimize(obj, x0, config)
        if res.fun < best_val:
            best_x, best_val = res.x, res.fun
    return best_x, best_val, base


def _pairs_for(dims: MatMulDims, mode: str):
    if mode == "auto":
        mode = "cyclic" if dims.is_cubic else "single"
    if mode == "cyclic" and not dims.is_cubic:
        raise ValueError("cyclic mode needs P = Q = S; use mode='sandwich'")
    return PAIRS[:1] if mode == "single" else PAIRS


def sparsify_cycle(f: FactorTriple, dims, config: SparsifyConfig | None = None,
                   target=None) -> FactorTriple:
    """Reduce ``||A||_1 + ||B||_1 + ||C||_1`` while keeping ``compose(f)`` fixed.

    Sweeps over the factor pairs until a full sweep improves the total L1 norm
    by less than ``l1_improve_tol`` (relative) or ``max_sweeps`` is reached.
    A transform is applied only if it lowers the pair's L1 norm.

    The transforms fix ``T_PQS`` but not the residual ``compose(f) - T``, so
    the reconstruction of a fit with cost ``phi`` can move by a small multiple
    of ``sqrt(phi)``.  Polish the fit (``tol_cost`` near 1e-26) first when the
    reconstruction must stay fixed to better than that.

    Raises
    ------
    PreconditionError
        If ``f`` is not an exact fit (cost above 1e-12).
    """
    config = config or SparsifyConfig()
    dims = _as_dims(dims)
    f = f.to_float()
    target = build_matmul_tensor(dims) if target is None else target
    phi = residual_cost(f, target)
    if phi > 1e-12:
        raise PreconditionError(f"sparsification needs an exact fit, cost is {phi:.3e}")
    pairs = _pairs_for(dims, config.mode)
    rng = np.random.default_rng(config.seed)
    mats = {"a": f.a.copy(), "b": f.b.copy(), "c": f.c.copy()}
    total = f.l1()
    for sweep in range(config.max_sweeps):
        before = total
        for pair in pairs:
            inner, left, right = _pair_sizes(dims, pair)
            u, v = mats[pair[0]], mats[pair[1]]
            x, val, base = _best_transform(u, v, inner, left, right, config, rng)
            if val < base:
                nu, nv = transform_pair(x, u, v, left, right)
                mats[pair[0]], mats[pair[1]] = nu, nv
        total = sum(float(np.abs(m).sum()) for m in mats.values())
        log.debug("sweep %d: l1 %.6g -> %.6g", sweep, before, total)
        if before - total <= config.l1_improve_tol * before:
            break
    return FactorTriple(mats["a"], mats["b"], mats["c"])


def sparsity_report(f: FactorTriple, zero_tol: float = 1e-10, unit_tol: float = 1e-6) -> dict:
    vals = np.concatenate([np.asarray(m, dtype=float).ravel() for m in f.factors()])
    return {
        "l1": float(np.abs(vals).sum()),
        "nnz": int(np.count_nonzero(np.abs(vals) >= zero_tol)),
        "nnz_unit": int(np.count_nonzero(np.abs(np.abs(vals) - 1.0) <= unit_tol)),
    }


def reconstruction_gap(f_in: FactorTriple, f_out: FactorTriple) -> float:
    return float(np.linalg.norm(compose(f_in.to_float()) - compose(f_out.to_float())))

"""Snap float decompositions to small rationals, certify them, export algorithms."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .cp import FactorTriple, compose, from_theta, residual_cost, to_theta
from .solver import SolverConfig, solve
from .tensor import MatMulDims, _as_dims, build_exact_matmul_tensor, build_matmul_tensor

log = logging.getLogger(__name__)

HALF = Fraction(1, 2)


class UnverifiedError(ValueError):
    """Raised when exporting a decomposition that does not certify."""


# -- snapping ------------------------------------------------------------------

@dataclass
class SnapPlan:
    """Values to snap to, tried level by level.

    ``levels`` are tried in order; a later level is only used when no
    parameter can be frozen to a value of the earlier ones.
    """

    levels: tuple = ((Fraction(0), Fraction(1), Fraction(-1)),
                     (Fraction(2), Fraction(-2), HALF, -HALF))
    refit_budget: int = 200
    max_candidates: int | None = 40
    tol: float = 1e-16
    lift_tol: float = 1e-6
    lift_max_den: int = 4
    constrained_refit: bool = False

    def __post_init__(self):
        self.levels = tuple(tuple(Fraction(v) for v in lvl) for lvl in self.levels)
        if not self.levels or Fraction(0) not in self.target_set:
            raise ValueError("snap targets must be nonempty and include 0")

    @property
    def target_set(self) -> list:
        return [v for lvl in self.levels for v in lvl]


@dataclass
class SnapResult:
    success: bool
    factors: FactorTriple
    frozen: np.ndarray
    phi: float
    attempts: int = 0
    history: list = field(default_factory=list)
    message: str = ""


def _nearest(values: np.ndarray, targets):
    tv = np.array([float(t) for t in targets])
    d = np.abs(values[:, None] - tv[None, :])
    j = np.argmin(d, axis=1)
    return d[np.arange(values.size), j], j


def snap_and_refit(f: FactorTriple, target, plan: SnapPlan | None = None,
                   solver_config: SolverConfig | None = None) -> SnapResult:
    """Freeze parameters one at a time to small rationals, refitting in between.

    Each round orders the free parameters by distance to the nearest value of
    the current level (ties by index), freezes the first candidate at that
    value and reruns the masked LM on the rest (on the sphere through the
    current point only if ``plan.constrained_refit``).  The freeze is kept
    when the refit reaches ``plan.tol``; otherwise the next candidate is tried.
    When a whole level fails, the next level is tried.  On success every
    parameter is frozen and the returned factors hold ``Fraction`` entries.
    """
    plan = plan or SnapPlan()
    base = solver_config or SolverConfig()
    f = f.to_float()
    shape, rank = f.shape, f.rank
    phi0 = residual_cost(f, target)
    if phi0 > 1e-12:
        raise ValueError(f"snapping needs an exact fit, cost is {phi0:.3e}")

    theta = to_theta(f)
    npar = theta.size
    frozen = np.zeros(npar, bool)
    exact_vals: dict[int, Fraction] = {}
    history = []
    attempts = 0
    phi = phi0

    def refit(th, fz):
        cfg = replace(base, c=None, max_iters=plan.refit_budget, tol_cost=plan.tol,
                      restarts=1, stop_on_exact=True, constrained=plan.constrained_refit)
        out = solve(target, rank, cfg, init=th, mask=~fz)
        return out.best_theta, out.best_phi

    while not frozen.all():
        free_idx = np.flatnonzero(~frozen)
        accepted = False
        for level in plan.levels:
            dist, which = _nearest(theta[free_idx], level)
            order = np.lexsort((free_idx, dist))
            if plan.max_candidates is not None:
                order = order[: plan.max_candidates]
            for o in order:
                idx = int(free_idx[o])
                val = level[which[o]]
                trial = theta.copy()
                trial[idx] = float(val)
                fz = frozen.copy()
                fz[idx] = True
                attempts += 1
                if fz.all():
                    new_theta, new_phi = trial, residual_cost(from_theta(trial, shape, rank), target)
                else:
                    try:
                        new_theta, new_phi = refit(trial, fz)
                    except (ValueError, ArithmeticError):
                        continue
                if new_phi <= plan.tol:
                    theta, phi, frozen = new_theta, new_phi, fz
                    exact_vals[idx] = val
                    history.append((idx, val))
                    accepted = True
                    break
            if accepted:
                break
        if not accepted:
            lifted = _lift_remaining(theta, frozen, plan)
            if lifted is not None:
                for i, v in lifted.items():
                    exact_vals[i] = v
                    frozen[i] = True
                break
            partial = _assemble(theta, exact_vals, shape, rank, exact=False)
            return SnapResult(False, partial, frozen, phi, attempts, history,
                              f"no free parameter could be frozen ({int((~frozen).sum())} left)")

    exact = _assemble(theta, exact_vals, shape, rank, exact=True)
    return SnapResult(True, exact, frozen, phi, attempts, history, "all parameters frozen")


def _lift_remaining(theta, frozen, plan):
    out = {}
    for i in np.flatnonzero(~frozen):
        fr = Fraction(float(theta[i])).limit_denominator(plan.lift_max_den)
        if abs(float(fr) - theta[i]) > plan.lift_tol:
            return None
        out[int(i)] = fr
    return out


def _assemble(theta, exact_vals, shape, rank, exact):
    if not exact:
        th = theta.copy()
        for i, v in exact_vals.items():
            th[i] = float(v)
        return from_theta(th, shape, rank)
    th = np.empty(theta.size, dtype=object)
    for i in range(theta.size):
        th[i] = exact_vals[i]
    return from_theta(th, shape, rank)


# -- verification -----------------------------------------------------------------

@dataclass
class Certificate:
    dims: MatMulDims
    rank: int
    ok: bool = True

    def __bool__(self):
        return True

    def describe(self) -> str:
        return f"certified: rank-{self.rank} decomposition reproduces T_{self.dims.label} exactly"


@dataclass
class Counterexample:
    dims: MatMulDims
    index: tuple
    expected: Fraction
    got: Fraction
    ok: bool = False

    def __bool__(self):
        return False

    def describe(self) -> str:
        i, j, k = (v + 1 for v in self.index)
        return f"counterexample at ({i},{j},{k}): tensor has {self.expected}, decomposition gives {self.got}"


def verify_exact(f: FactorTriple, dims):
    """Compare ``compose(f)`` with ``T_PQS`` in exact rational arithmetic.

    Float entries are lifted to their exact binary values, so rounding error is
    never forgiven.  Returns a truthy :class:`Certificate` or a falsy
    :class:`Counterexample` naming the first mismatching entry (C order).
    """
    dims = _as_dims(dims)
    ex = f if f.is_exact else f.to_exact()
    if ex.shape != dims.shape:
        raise ValueError(f"factor shapes {ex.shape} do not match T_{dims.label} {dims.shape}")
    want = build_exact_matmul_tensor(dims)
    got = compose(ex)
    for idx in np.ndindex(*dims.shape):
        if got[idx] != want[idx]:
            return Counterexample(dims, tuple(int(v) for v in idx), want[idx], Fraction(got[idx]))
    return Certificate(dims, ex.rank)


# -- bilinear programs ---------------------------------------------------------

@dataclass
class BilinearProgram:
    """``m_r = (sum e_coeffs * vec(E^T)) * (sum f_coeffs * vec(F^T))``;
    output ``k`` (column-major position in ``G``) is ``sum outputs[k][r] * m_r``.
    """

    dims: MatMulDims
    products: list
    outputs: list

    @property
    def rank(self) -> int:
        return len(self.products)

    def e_name(self, idx: int) -> str:
        k, m = divmod(idx, self.dims.q)
        return _entry_name("e", k, m, self.dims.q)

    def f_name(self, idx: int) -> str:
        m, n = divmod(idx, self.dims.s)
        return _entry_name("f", m, n, self.dims.s)

    def g_position(self, k: int) -> tuple[int, int]:
        n, row = divmod(k, self.dims.p)
        return row, n

    def to_dict(self) -> dict:
        def coeffs(d, namer):
            return {namer(i): f"{v.numerator}/{v.denominator}" for i, v in sorted(d.items())}

        outs = {}
        for k, comb in enumerate(self.outputs):
            row, col = self.g_position(k)
            outs[_entry_name("g", row, col, self.dims.s)] = {
                f"m{r + 1}": f"{v.numerator}/{v.denominator}" for r, v in sorted(comb.items())
            }
        return {
            "dims": list(self.dims),
            "rank": self.rank,
            "products": [
                {"name": f"m{r + 1}", "e": coeffs(e, self.e_name), "f": coeffs(fc, self.f_name)}
                for r, (e, fc) in enumerate(self.products)
            ],
            "outputs": outs,
        }

    def to_text(self) -> str:
        """Listing of the products followed by the output combinations."""
        lines = [f"# {self.dims.p}x{self.dims.q} times {self.dims.q}x{self.dims.s}: "
                 f"{self.rank} multiplications"]
        for r, (e, fc) in enumerate(self.products):
            lines.append(f"m{r + 1} = {_render_product(e, fc, self.e_name, self.f_name)}")
        lines.append("")
        for row in range(self.dims.p):
            for col in range(self.dims.s):
                comb = self.outputs[col * self.dims.p + row]
                name = _entry_name("g", row, col, self.dims.s)
                lines.append(f"{name} = {_render_sum(comb, lambda r: f'm{r + 1}')}")
        return "\n".join(lines) + "\n"

    def to_pseudocode(self) -> str:
        """Straight-line program with explicit operation counts."""
        body = []
        adds = 0
        scal = 0
        for r, (e, fc) in enumerate(self.products):
            sgn_e, e2 = _factored(e)
            sgn_f, f2 = _factored(fc)
            se, ae, ce = _linear_code(e2, self.e_name)
            sf, af, cf = _linear_code(f2, self.f_name)
            adds += ae + af
            scal += ce + cf
            neg = "-" if sgn_e * sgn_f < 0 else ""
            body.append(f"m{r + 1} = {neg}({se}) * ({sf})")
        for row in range(self.dims.p):
            for col in range(self.dims.s):
                comb = self.outputs[col * self.dims.p + row]
                s, a, c = _linear_code(comb, lambda i: f"m{i + 1}")
                adds += a
                scal += c
                body.append(f"{_entry_name('g', row, col, self.dims.s)} = {s}")
        head = [
            f"# inputs: E ({self.dims.p}x{self.dims.q}), F ({self.dims.q}x{self.dims.s})",
            f"# multiplications: {self.rank}",
            f"# additions/subtractions: {adds}",
            f"# scalings by constants other than +-1: {scal}",
        ]
        return "\n".join(head + body) + "\n"


def _entry_name(letter, i, j, ncols) -> str:
    sep = "" if max(i, j) < 9 else "_"
    return f"{letter}{i + 1}{sep}{j + 1}"


def _coef_text(v: Fraction) -> str:
    return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


def _render_sum(d: dict, namer) -> str:
    if not d:
        return "0"
    parts = []
    for i, (key, v) in enumerate(sorted(d.items())):
        sign = "-" if v < 0 else "+"
        mag = abs(v)
        term = namer(key) if mag == 1 else f"{_coef_text(mag)}*{namer(key)}"
        if i == 0:
            parts.append(term if sign == "+" else f"-{term}")
        else:
            parts.append(f" {sign} {term}")
    return "".join(parts)


def _factored(d: dict):
    """Pull out -1 when most coefficients are negative (or on a tie, the first)."""
    neg = sum(1 for v in d.values() if v < 0)
    lead_neg = bool(d) and d[min(d)] < 0
    if neg * 2 > len(d) or (neg * 2 == len(d) and lead_neg):
        return -1, {k: -v for k, v in d.items()}
    return 1, d


def _render_product(e: dict, f: dict, e_name, f_name) -> str:
    se, e2 = _factored(e)
    sf, f2 = _factored(f)
    sign = se * sf

    def wrap(d, namer):
        text = _render_sum(d, namer)
        return text if len(d) == 1 and not text.startswith("-") and "*" not in text else f"({text})"

    body = wrap(e2, e_name) + wrap(f2, f_name)
    return ("-" if sign < 0 else "") + body


def _linear_code(d: dict, namer):
    text = _render_sum(d, namer)
    adds = max(len(d) - 1, 0)
    scal = sum(1 for v in d.values() if abs(v) != 1)
    return text, adds, scal


def _sparse_col(col) -> dict:
    return {i: Fraction(v) for i, v in enumerate(col) if v != 0}


def export_bilinear(f: FactorTriple, dims, *, check: bool = True) -> BilinearProgram:
    """Turn a certified decomposition into a :class:`BilinearProgram`.

    Product ``r`` pairs column ``r`` of A (over ``vec(E^T)``) with column ``r``
    of B (over ``vec(F^T)``); output ``k`` combines the products with row ``k``
    of C.

    Raises
    ------
    UnverifiedError
        If ``check`` is on and :func:`verify_exact` fails.
    """
    dims = _as_dims(dims)
    ex = f if f.is_exact else f.to_exact()
    if check:
        if ex.rank == 0:
            raise UnverifiedError("rank-0 decomposition cannot be exported")
        cert = verify_exact(ex, dims)
        if not cert:
            raise UnverifiedError(cert.describe())
    products = [(_sparse_col(ex.a[:, r]), _sparse_col(ex.b[:, r])) for r in range(ex.rank)]
    outputs = [_sparse_col(ex.c[k, :]) for k in range(ex.c.shape[0])]
    return BilinearProgram(dims, products, outputs)


def run_bilinear(prog: BilinearProgram, e, f, counter: Counter | None = None) -> np.ndarray:
    """Evaluate the program on matrices ``e`` (P x Q) and ``f`` (Q x S).

    Only the ``R`` products of an E-form by an F-form are counted as
    multiplications (``counter["mul"]``); constant scalings are counted under
    ``"scale"``.  Integer or ``Fraction`` inputs give exact results.
    """
    p, q, s = prog.dims
    e = np.asarray(e)
    f = np.asarray(f)
    if e.shape != (p, q) or f.shape != (q, s):
        raise ValueError(f"expected E {p}x{q} and F {q}x{s}, got {e.shape} and {f.shape}")
    counter = counter if counter is not None else Counter()
    ev = e.reshape(-1).tolist()
    fv = f.reshape(-1).tolist()

    def lin(d, xs):
        acc = 0
        for i, v in d.items():
            x = xs[i]
            if v == 1:
                acc = acc + x
            elif v == -1:
                acc = acc - x
            else:
                counter["scale"] += 1
                acc = acc + (v * x if not isinstance(x, float) else float(v) * x)
        return acc

    ms = []
    for de, df in prog.products:
        ms.append(lin(de, ev) * lin(df, fv))
        counter["mul"] += 1
    out = np.empty((p, s), dtype=object)
    for k, comb in enumerate(prog.outputs):
        row, col = prog.g_position(k)
        out[row, col] = lin(comb, ms)
    if e.dtype != object and f.dtype != object:
        kind = np.result_type(e.dtype, f.dtype)
        if np.issubdtype(kind, np.integer):
            return out.astype(np.int64) if all(isinstance(v, int) for v in out.flat) else out
        return out.astype(float)
    return out


def snap_to_rational(values, max_den: int = 4, tol: float = 1e-6):
    """Round an array to nearby rationals with small denominators, or ``None``."""
    out = np.empty(np.shape(values), dtype=object)
    for idx, v in np.ndenumerate(np.asarray(values, dtype=float)):
        fr = Fraction(v).limit_denominator(max_den)
        if abs(float(fr) - v) > tol:
            return None
        out[idx] = fr
    return out


def tensor_check(f: FactorTriple, dims) -> float:
    """Float reconstruction error against ``T_PQS`` (advisory only)."""
    return residual_cost(f.to_float(), build_matmul_tensor(dims))

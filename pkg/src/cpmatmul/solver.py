"""Levenberg-Marquardt descent on the sphere ``||theta||^2 = c``.

Each iteration minimizes the damped Gauss-Newton model in the tangent plane at
the current iterate, then rescales back onto the sphere.  Damping follows the
usual gain-ratio rule.  Frozen (masked) coordinates are removed from the
linear algebra and keep their values.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.linalg

from .cp import FactorTriple, from_theta, gradient_and_gn_hessian, n_params, residual_cost, to_theta

log = logging.getLogger(__name__)

EXACT_FIT = "exact_fit"
STATIONARY = "stationary"
ITERATION_LIMIT = "iteration_limit"

MU_MAX = 1e30
COND_MAX = 1e14


class StepError(ArithmeticError):
    """A trial step could not be formed; the caller should raise the damping."""


@dataclass
class SolverConfig:
    """Settings for one constrained LM descent and its restarts.

    ``c=None`` picks ``ceil(6.5 * rank)`` (or ``||init||^2`` when an initial
    point is supplied).
    """

    c: float | None = None
    max_iters: int = 1000
    tau: float = 1e-3
    tol_cost: float = 1e-16
    tol_grad: float = 1e-13
    tol_step: float = 1e-13
    seed: int = 0
    restarts: int = 1
    init_scale: float = 1.0
    constrained: bool = True
    norm_multiplier: bool = False
    stop_on_exact: bool = True
    workers: int = 1
    budget: float | None = None

    def __post_init__(self):
        if self.c is not None and not self.c > 0:
            raise ValueError("c must be positive")
        for name in ("tol_cost", "tol_grad", "tol_step", "tau", "init_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iters < 0 or self.restarts < 1:
            raise ValueError("max_iters must be >= 0 and restarts >= 1")

    def radius2(self, rank: int) -> float:
        return float(self.c) if self.c is not None else default_c(rank)

    def to_dict(self) -> dict:
        return asdict(self)


def default_c(rank: int) -> float:
    return float(math.ceil(6.5 * rank))


@dataclass
class SolverState:
    theta: np.ndarray
    mask: np.ndarray
    mu: float
    nu: float = 2.0
    iter: int = 0
    phi: float = math.inf
    trace: list = field(default_factory=list)


@dataclass
class RunOutcome:
    best_theta: np.ndarray
    mask: np.ndarray
    best_phi: float
    status: str
    restart_index: int
    seed: int
    c: float
    rank: int
    shape: tuple
    iterations: int = 0
    trace: list = field(default_factory=list)

    @property
    def factors(self) -> FactorTriple:
        return from_theta(self.best_theta, self.shape, self.rank)

    @property
    def exact(self) -> bool:
        return self.status == EXACT_FIT


@dataclass
class StepResult:
    theta: np.ndarray
    delta: np.ndarray


def constrained_step(theta0, g, h, mu, c, mask=None, *, constrained=True, norm_multiplier=False):
    """Damped tangent-plane step followed by projection onto ``||theta||^2 = c``.

    With ``M = (H_ff + mu I)^{-1}`` on the free coordinates ``f``::

        delta  = -M g + lam M theta0,   lam = theta0' M g / theta0' M theta0
        theta1 = rescale(theta0 + delta)

    so that ``theta0' delta = 0``.  ``norm_multiplier`` uses ``||theta0||^2`` as the
    multiplier denominator instead.  With ``constrained=False`` this is the
    plain LM step ``-(H + mu I)^{-1} g``.

    Raises
    ------
    StepError
        If ``H + mu I`` is numerically singular or the projection degenerates.
    """
    theta0 = np.asarray(theta0, dtype=float)
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    free = np.ones(theta0.size, bool) if mask is None else np.asarray(mask, bool)
    idx = np.flatnonzero(free)
    delta = np.zeros_like(theta0)
    if idx.size == 0:
        return StepResult(theta0.copy(), delta)

    k = h[np.ix_(idx, idx)]
    k = k + mu * np.eye(idx.size)
    try:
        fac = scipy.linalg.cho_factor(k, lower=False, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise StepError("damped Hessian is not positive definite") from exc
    d = np.abs(np.diag(fac[0]))
    if d.min() == 0 or (d.max() / d.min()) ** 2 > COND_MAX:
        raise StepError("damped Hessian is ill-conditioned")

    gf = g[idx]
    mg = scipy.linalg.cho_solve(fac, gf, check_finite=False)
    df = -mg
    if constrained:
        t0 = theta0[idx]
        mt = scipy.linalg.cho_solve(fac, t0, check_finite=False)
        denom = float(t0 @ t0) if norm_multiplier else float(t0 @ mt)
        if denom > 0:
            df = df + (float(t0 @ mg) / denom) * mt
    delta[idx] = df
    if not constrained:
        return StepResult(theta0 + delta, delta)

    theta1 = theta0 + delta
    theta1[idx] = _rescale(theta1[idx], c - _frozen_norm2(theta0, free))
    return StepResult(theta1, delta)


def _frozen_norm2(theta, free) -> float:
    fr = theta[~free]
    return float(fr @ fr)


def _rescale(x, target2):
    nrm = float(np.linalg.norm(x))
    if target2 <= 0 or nrm < 1e-12:
        raise StepError("degenerate projection onto the sphere")
    return x * (math.sqrt(target2) / nrm)


def damping_update(mu: float, nu: float, rho: float) -> tuple[float, float]:
    """Gain-ratio damping rule; returns the new ``(mu, nu)``."""
    if rho > 0:
        return mu * max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3), 2.0
    return mu * nu, 2.0 * nu


def project_to_sphere(theta, c, mask=None) -> np.ndarray:
    """Rescale the free part of ``theta`` so that ``||theta||^2 = c``."""
    theta = np.array(theta, dtype=float)
    free = np.ones(theta.size, bool) if mask is None else np.asarray(mask, bool)
    theta[free] = _rescale(theta[free], c - _frozen_norm2(theta, free))
    return theta


def restart_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for restart ``index`` derived from the master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),)))


def derive_seed(seed: int, *keys: int) -> int:
    """Child seed for a sub-task, e.g. one c value of a sweep.

    ``SeedSequence(seed, spawn_key=keys)`` hashed down to 63 bits.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(2, np.uint64)[0] >> np.uint64(1))


def random_init(shape, rank, c, rng, init_scale=1.0) -> np.ndarray:
    theta = rng.standard_normal(n_params(shape, rank)) * init_scale
    return project_to_sphere(theta, c)


def _projected_grad_norm(g, theta, free, constrained) -> float:
    gf = g[free]
    if not constrained:
        return float(np.linalg.norm(gf))
    tf = theta[free]
    tt = float(tf @ tf)
    if tt > 0:
        gf = gf - (float(gf @ tf) / tt) * tf
    return float(np.linalg.norm(gf))


def solve(target, rank, config: SolverConfig | None = None, init=None, mask=None,
          *, restart_index: int = 0, rng=None) -> RunOutcome:
    """Run one constrained LM descent towards ``target``.

    Parameters
    ----------
    target : ndarray
        Order-3 tensor to fit.
    rank : int
        Number of rank-one terms.
    config : SolverConfig
    init : ndarray or FactorTriple, optional
        Starting point; drawn at random from ``restart_rng(config.seed,
        restart_index)`` when omitted.
    mask : bool ndarray, optional
        True marks a free coordinate.  Frozen coordinates never change.
    """
    config = config or SolverConfig()
    if rank < 1:
        raise ValueError("rank must be >= 1")
    shape = tuple(target.shape)
    npar = n_params(shape, rank)
    free = np.ones(npar, bool) if mask is None else np.asarray(mask, bool).copy()
    if free.size != npar:
        raise ValueError(f"mask has {free.size} entries, expected {npar}")

    if init is None:
        c = config.radius2(rank)
        rng = rng if rng is not None else restart_rng(config.seed, restart_index)
        theta = rng.standard_normal(npar) * config.init_scale
    else:
        theta = to_theta(init) if isinstance(init, FactorTriple) else np.array(init, dtype=float)
        if theta.size != npar:
            raise ValueError(f"init has {theta.size} entries, expected {npar}")
        c = float(config.c) if config.c is not None else float(theta @ theta)
    if config.constrained:
        theta = project_to_sphere(theta, c, free)

    def evaluate(th):
        f = from_theta(th, shape, rank)
        return residual_cost(f, target), f

    phi, f = evaluate(theta)
    g, h = gradient_and_gn_hessian(f, target)
    diag = np.diag(h)[free]
    mu = config.tau * (float(diag.max()) if diag.size and diag.max() > 0 else 1.0)
    nu = 2.0
    trace = [(0, phi, mu, 0.0, True)]
    status = ITERATION_LIMIT
    it = 0
    while True:
        if phi <= config.tol_cost:
            status = EXACT_FIT
            break
        if not free.any() or _projected_grad_norm(g, theta, free, config.constrained) <= config.tol_grad:
            status = STATIONARY
            break
        if it >= config.max_iters:
            break
        if mu > MU_MAX:
            status = STATIONARY
            break
        it += 1
        try:
            step = constrained_step(theta, g, h, mu, c, free,
                                    constrained=config.constrained,
                                    norm_multiplier=config.norm_multiplier)
        except StepError:
            mu, nu = damping_update(mu, nu, -1.0)
            trace.append((it, phi, mu, math.nan, False))
            continue
        dlt = step.delta
        step_norm = float(np.linalg.norm(dlt))
        pred = -(2.0 * float(g @ dlt) + float(dlt @ (h @ dlt)))
        phi_new, f_new = evaluate(step.theta)
        rho = (phi - phi_new) / pred if pred > 0 else -1.0
        accepted = rho > 0 and phi_new < phi
        mu, nu = damping_update(mu, nu, rho if accepted else -1.0)
        if accepted:
            theta, phi, f = step.theta, phi_new, f_new
            g, h = gradient_and_gn_hessian(f, target)
        trace.append((it, phi, mu, step_norm, accepted))
        if step_norm <= config.tol_step * (float(np.linalg.norm(theta)) + config.tol_step):
            status = EXACT_FIT if phi <= config.tol_cost else STATIONARY
            break

    return RunOutcome(
        best_theta=theta, mask=free, best_phi=phi, status=status,
        restart_index=restart_index, seed=config.seed, c=c, rank=rank,
        shape=shape, iterations=it, trace=trace,
    )


def _solve_task(args):
    target, rank, config, index = args
    return solve(target, rank, config, restart_index=index)


@dataclass
class MultiRestartResult:
    best: RunOutcome
    outcomes: list

    @property
    def exact(self) -> bool:
        return self.best.exact


def multi_restart(target, rank, config: SolverConfig | None = None, first_index: int = 0) -> MultiRestartResult:
    """Run ``config.restarts`` independent random descents and keep the best.

    Restart ``i`` draws its start from ``restart_rng(config.seed, i)``.  The best
    outcome is the minimum ``phi``, ties to the lowest index.  With
    ``stop_on_exact`` the search ends at the lowest-index exact fit and later
    restarts are discarded, whatever the worker count.  A wall-clock ``budget``
    stops launching new restarts once exceeded.
    """
    config = config or SolverConfig()
    start = time.monotonic()
    outcomes: list[RunOutcome] = []

    def over_budget():
        return config.budget is not None and time.monotonic() - start > config.budget

    if config.workers > 1:
        batch = config.workers
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            end = first_index + config.restarts
            for lo in range(first_index, end, batch):
                hi = min(lo + batch, end)
                outcomes.extend(pool.map(_solve_task, [(target, rank, config, i) for i in range(lo, hi)]))
                if (config.stop_on_exact and any(o.exact for o in outcomes)) or over_budget():
                    break
    else:
        for i in range(first_index, first_index + config.restarts):
            out = solve(target, rank, config, restart_index=i)
            outcomes.append(out)
            log.debug("restart %d: phi=%.3e status=%s iters=%d", i, out.best_phi, out.status, out.iterations)
            if (config.stop_on_exact and out.exact) or over_budget():
                break

    if config.stop_on_exact:
        for j, o in enumerate(outcomes):
            if o.exact:
                outcomes = outcomes[: j + 1]
                return MultiRestartResult(o, outcomes)
    best = min(outcomes, key=lambda o: (o.best_phi, o.restart_index))
    return MultiRestartResult(best, outcomes)


def with_overrides(config: SolverConfig, **kw) -> SolverConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})

"""Rank searches, c-sweeps and the decompose -> sparsify -> rationalize pipeline."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import io
from .cp import FactorTriple
from .rational import SnapPlan, export_bilinear, snap_and_refit, verify_exact
from .solver import EXACT_FIT, MultiRestartResult, SolverConfig, derive_seed, multi_restart
from .sparsify import SparsifyConfig, sparsify_cycle, sparsity_report
from .tensor import MatMulDims, build_matmul_tensor

log = logging.getLogger(__name__)


def geometric_grid(c_min: float, c_max: float, per_decade: int = 16) -> list[float]:
    """Log-spaced c values from ``c_min`` to ``c_max`` inclusive."""
    if not 0 < c_min < c_max:
        raise ValueError("need 0 < c_min < c_max")
    n = max(int(round(math.log10(c_max / c_min) * per_decade)), 1) + 1
    return [float(v) for v in np.geomspace(c_min, c_max, n)]


@dataclass
class SweepSpec:
    dims: MatMulDims
    rank: int
    c_values: list
    restarts_per_c: int = 10
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0

    def __post_init__(self):
        cv = [float(c) for c in self.c_values]
        if not cv or any(b <= a for a, b in zip(cv, cv[1:])) or cv[0] <= 0:
            raise ValueError("c_values must be positive and strictly ascending")
        self.c_values = cv


@dataclass
class SweepRow:
    c: float
    best_phi: float
    status: str
    restarts_used: int
    wall_time: float


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list
    classification: dict

    def csv(self) -> str:
        return io.sweep_csv(self.rows)


def classify_sweep(rows, *, tol_cost: float = 1e-16, slope_max: float = -0.5,
                   floor_ratio: float = 10.0) -> dict:
    """Label the trend of ``best_phi`` over the upper half of the c grid.

    ``exact_fit``: every upper-half point is an exact fit.
    ``border-rank candidate``: the log-log slope is at most ``slope_max``.
    ``floor``: ``best_phi`` changes by less than ``floor_ratio`` across the half.
    Anything else is ``inconclusive``.  This is evidence, not proof.
    """
    top = rows[len(rows) // 2:] if len(rows) > 1 else list(rows)
    phis = np.array([r.best_phi for r in top], dtype=float)
    cs = np.array([r.c for r in top], dtype=float)
    info = {"points": len(top), "slope": None, "ratio": None,
            "slope_max": slope_max, "floor_ratio": floor_ratio}
    if np.all(phis <= tol_cost):
        info["label"] = "exact_fit"
        return info
    logp = np.log(np.maximum(phis, 1e-300))
    if len(top) >= 2:
        info["slope"] = float(np.polyfit(np.log(cs), logp, 1)[0])
    info["ratio"] = float(phis.max() / max(phis.min(), 1e-300))
    if info["slope"] is not None and info["slope"] <= slope_max:
        info["label"] = "border-rank candidate"
    elif info["ratio"] < floor_ratio:
        info["label"] = "floor"
    else:
        info["label"] = "inconclusive"
    return info


def run_sweep(spec: SweepSpec, **classify_kw) -> SweepResult:
    """For each c run ``restarts_per_c`` restarts and keep the best cost.

    The restarts at the ``j``-th c value use master seed
    ``derive_seed(spec.seed, j)``.
    """
    target = build_matmul_tensor(spec.dims)
    rows = []
    for j, c in enumerate(spec.c_values):
        cfg = replace(spec.solver, c=c, restarts=spec.restarts_per_c, seed=derive_seed(spec.seed, j))
        t0 = time.monotonic()
        res = multi_restart(target, spec.rank, cfg)
        rows.append(SweepRow(c, res.best.best_phi, res.best.status, len(res.outcomes),
                             time.monotonic() - t0))
        log.info("c=%.4g best_phi=%.3e (%s)", c, res.best.best_phi, res.best.status)
    classify_kw.setdefault("tol_cost", spec.solver.tol_cost)
    return SweepResult(spec, rows, classify_sweep(rows, **classify_kw))


# -- pipeline -------------------------------------------------------------------

@dataclass
class StageReport:
    stage: str
    ok: bool
    detail: str = ""
    artifact: str | None = None


@dataclass
class PipelineResult:
    dims: MatMulDims
    rank: int
    ok: bool
    stages: list
    program: object = None
    factors: FactorTriple | None = None
    failed_stage: str | None = None

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "rank": self.rank,
            "ok": self.ok,
            "failed_stage": self.failed_stage,
            "stages": [asdict(s) for s in self.stages],
        }


def outcome_document(res: MultiRestartResult, dims: MatMulDims) -> dict:
    best = res.best
    return io.factors_to_dict(best.factors, dims, {
        "phi": best.best_phi, "status": best.status, "seed": best.seed,
        "restart": best.restart_index, "c": best.c,
    })


def run_pipeline(dims, rank: int, solver: SolverConfig | None = None,
                 sparsify: SparsifyConfig | None = None, plan: SnapPlan | None = None,
                 out_dir=None, max_solutions: int = 5) -> PipelineResult:
    """Decompose, sparsify, rationalize, verify and export.

    Exact fits are taken in restart order.  If one cannot be rationalized, the
    search resumes at the next restart, up to ``max_solutions`` exact fits.
    Each stage's artifact is written to ``out_dir`` when given.
    """
    dims = dims if isinstance(dims, MatMulDims) else MatMulDims(*dims)
    solver = solver or SolverConfig()
    solver = replace(solver, stop_on_exact=True)
    if sparsify is None:
        sparsify = SparsifyConfig(mode="cyclic" if dims.is_cubic else "sandwich", seed=solver.seed)
    plan = plan or SnapPlan()
    out = Path(out_dir) if out_dir is not None else None
    target = build_matmul_tensor(dims)
    stages: list[StageReport] = []
    t_start = time.monotonic()

    def save(name, text):
        if out is None:
            return None
        return str(io.atomic_write(out / name, text))

    def fail(stage, detail, artifact=None):
        stages.append(StageReport(stage, False, detail, artifact))
        result = PipelineResult(dims, rank, False, stages, failed_stage=stage)
        save("report.json", json.dumps(result.to_dict(), indent=1) + "\n")
        return result

    next_index = 0
    all_outcomes = []
    found = 0
    last_snap = None
    dec_rep = sp_rep = None
    while found < max_solutions and next_index < solver.restarts:
        budget = None
        if solver.budget is not None:
            budget = solver.budget - (time.monotonic() - t_start)
            if budget <= 0:
                break
        cfg = replace(solver, restarts=solver.restarts - next_index, budget=budget)
        res = multi_restart(target, rank, cfg, first_index=next_index)
        all_outcomes.extend(res.outcomes)
        next_index = all_outcomes[-1].restart_index + 1
        if not res.exact:
            break
        found += 1
        art = save("decompose.json", json.dumps(outcome_document(res, dims), indent=1) + "\n")
        save("trace.csv", io.trace_csv(all_outcomes))
        dec_rep = StageReport("decompose", True, f"exact fit at restart {res.best.restart_index}, "
                              f"phi={res.best.best_phi:.3e}, c={res.best.c:g}", art)

        sparse = sparsify_cycle(res.best.factors, dims, sparsify, target)
        rep = sparsity_report(sparse)
        art = save("sparse.json", json.dumps(io.factors_to_dict(sparse, dims, {"sparsity": rep}), indent=1) + "\n")
        sp_rep = StageReport("sparsify", True, f"l1={rep['l1']:.4f} nnz={rep['nnz']}", art)

        last_snap = snap_and_refit(sparse, target, plan, replace(solver, restarts=1))
        if last_snap.success:
            break
        log.info("restart %d: rationalization failed (%s); continuing search",
                 res.best.restart_index, last_snap.message)

    if found == 0:
        save("trace.csv", io.trace_csv(all_outcomes))
        best = min(all_outcomes, key=lambda o: (o.best_phi, o.restart_index)) if all_outcomes else None
        art = None
        detail = "no restarts run"
        if best is not None:
            detail = f"no exact fit in {len(all_outcomes)} restarts; best phi={best.best_phi:.3e}"
            doc = io.factors_to_dict(best.factors, dims, {
                "phi": best.best_phi, "status": best.status, "seed": best.seed,
                "restart": best.restart_index, "c": best.c})
            art = save("decompose.json", json.dumps(doc, indent=1) + "\n")
        return fail("decompose", detail, art)
    stages.extend([dec_rep, sp_rep])
    if not last_snap.success:
        art = save("rational_partial.json",
                   json.dumps(io.factors_to_dict(last_snap.factors, dims), indent=1) + "\n")
        return fail("rationalize", f"{found} exact fit(s) tried; last: {last_snap.message}", art)

    rat = last_snap.factors
    art = save("rational.json", json.dumps(io.factors_to_dict(rat, dims), indent=1) + "\n")
    values = sorted({Fraction(v) for m in rat.factors() for v in m.ravel()})
    values = [str(v) for v in values]
    stages.append(StageReport("rationalize", True, f"{last_snap.attempts} freeze attempts; values {values}", art))

    cert = verify_exact(rat, dims)
    if not cert:
        return fail("verify", cert.describe())
    stages.append(StageReport("verify", True, cert.describe()))

    prog = export_bilinear(rat, dims)
    save("program.json", json.dumps(prog.to_dict(), indent=1) + "\n")
    save("program.txt", prog.to_text())
    art = save("program_code.txt", prog.to_pseudocode())
    stages.append(StageReport("export", True, f"{prog.rank} multiplications", art))
    result = PipelineResult(dims, rank, True, stages, program=prog, factors=rat)
    save("report.json", json.dumps(result.to_dict(), indent=1) + "\n")
    return result

"""Command-line interface: ``cpmatmul <subcommand> ...``.

Exit codes: 0 success / certificate, 2 best effort (no exact fit or failed
stage), 3 verification counterexample, 4 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import io
from .experiments import SweepSpec, geometric_grid, run_pipeline, run_sweep
from .rational import SnapPlan, export_bilinear, snap_and_refit, verify_exact
from .solver import SolverConfig, multi_restart
from .sparsify import PreconditionError, SparsifyConfig, sparsify_cycle, sparsity_report
from .tensor import MatMulDims, TensorSizeError, build_matmul_tensor, tensor_to_fixture

EXIT_OK = 0
EXIT_BEST_EFFORT = 2
EXIT_COUNTEREXAMPLE = 3
EXIT_USAGE = 4

SHIPPED = ("strassen", "t332_r15")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p, *, dims=True, rank=True, solver=True):
    if dims:
        p.add_argument("--dims", help="P,Q,S")
    if rank:
        p.add_argument("--rank", type=int)
    if solver:
        p.add_argument("--c", type=float, help="squared radius of the constraint sphere")
        p.add_argument("--restarts", type=int)
        p.add_argument("--max-iters", type=int)
        p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--budget", type=float, help="wall-clock budget in seconds")
    p.add_argument("--out", help="output path")
    p.add_argument("--config", help="JSON file with the same keys as the flags")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cpmatmul", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-tensor", help="write the ones-list fixture of T_PQS")
    _common(p, rank=False, solver=False)

    p = sub.add_parser("decompose", help="constrained LM search for an exact fit")
    _common(p)
    p.add_argument("--trace", help="trace CSV path (default: next to --out)")

    p = sub.add_parser("sweep", help="best cost as a function of c")
    _common(p)
    p.add_argument("--c-values", help="comma-separated ascending c values")
    p.add_argument("--c-min", type=float)
    p.add_argument("--c-max", type=float)
    p.add_argument("--per-decade", type=int, default=16)
    p.add_argument("--slope-max", type=float, default=-0.5)
    p.add_argument("--floor-ratio", type=float, default=10.0)

    p = sub.add_parser("pipeline", help="decompose, sparsify, rationalize, verify, export")
    _common(p)
    p.add_argument("--max-solutions", type=int, default=5)

    p = sub.add_parser("sparsify", help="lower the L1 norm of an exact decomposition")
    _common(p, dims=False, rank=False, solver=False)
    p.add_argument("input")
    p.add_argument("--mode", choices=["auto", "cyclic", "single", "sandwich"], default="auto")

    p = sub.add_parser("rationalize", help="snap an exact float decomposition to rationals")
    _common(p, dims=False, rank=False, solver=False)
    p.add_argument("input")
    p.add_argument("--refit-budget", type=int)

    p = sub.add_parser("verify", help="exact check of a factor file; prints the algorithm")
    _common(p, rank=False, solver=False)
    p.add_argument("input", help=f"factor JSON file or one of {', '.join(SHIPPED)}")

    p = sub.add_parser("export", help="render a verified decomposition as an algorithm")
    _common(p, dims=False, rank=False, solver=False)
    p.add_argument("input")
    p.add_argument("--format", choices=["json", "text", "code"], default="text")
    return parser


def _load_config(path) -> dict:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def _merged(args) -> dict:
    """Config file values overridden by explicitly given flags."""
    cfg = _load_config(getattr(args, "config", None))
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "command"):
            cfg[k] = v
    return cfg


def _dims(cfg) -> MatMulDims:
    d = cfg.get("dims")
    if d is None:
        raise UsageError("--dims is required")
    try:
        return MatMulDims(*d) if isinstance(d, list) else MatMulDims.parse(str(d))
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _rank(cfg) -> int:
    r = cfg.get("rank")
    if r is None:
        raise UsageError("--rank is required")
    if int(r) < 1:
        raise UsageError(f"rank must be >= 1, got {r}")
    return int(r)


def _solver(cfg) -> SolverConfig:
    names = {f.name for f in fields(SolverConfig)}
    kw = {k: v for k, v in cfg.items() if k in names}
    if "max_iters" in cfg:
        kw["max_iters"] = int(cfg["max_iters"])
    try:
        return SolverConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _out(cfg, default: str) -> Path:
    return Path(cfg.get("out") or default)


def _load_input(name: str):
    path = Path(name)
    if not path.exists() and name in SHIPPED:
        path = io.shipped_factor_path(name)
    if not path.exists():
        raise UsageError(f"no such file: {name}")
    f, dims, doc = io.load_factors(path)
    return f, dims, doc


def cmd_gen_tensor(cfg) -> int:
    dims = _dims(cfg)
    t = build_matmul_tensor(dims)
    out = _out(cfg, f"t{dims.label}.json")
    io.atomic_write(out, json.dumps(tensor_to_fixture(t)) + "\n")
    print(f"wrote {out}: T_{dims.label} {t.shape} with {int(t.sum())} ones")
    return EXIT_OK


def cmd_decompose(cfg) -> int:
    dims, rank = _dims(cfg), _rank(cfg)
    solver = _solver(cfg)
    target = build_matmul_tensor(dims)
    res = multi_restart(target, rank, solver)
    out = _out(cfg, f"t{dims.label}_r{rank}.json")
    best = res.best
    doc = io.factors_to_dict(best.factors, dims, {
        "phi": best.best_phi, "status": best.status, "seed": solver.seed,
        "restart": best.restart_index, "c": best.c,
    })
    io.atomic_write(out, json.dumps(doc, indent=1) + "\n")
    trace = Path(cfg.get("trace") or out.with_suffix(".trace.csv"))
    io.atomic_write(trace, io.trace_csv(res.outcomes))
    print(f"{best.status}: phi={best.best_phi:.3e} at restart {best.restart_index} "
          f"of {len(res.outcomes)} (c={best.c:g}); wrote {out}")
    return EXIT_OK if res.exact else EXIT_BEST_EFFORT


def cmd_sweep(cfg) -> int:
    dims, rank = _dims(cfg), _rank(cfg)
    if cfg.get("c_values"):
        cv = cfg["c_values"]
        cv = cv if isinstance(cv, list) else [float(x) for x in str(cv).split(",") if x]
    elif cfg.get("c_min") and cfg.get("c_max"):
        cv = geometric_grid(float(cfg["c_min"]), float(cfg["c_max"]), int(cfg.get("per_decade", 16)))
    else:
        raise UsageError("give --c-values or --c-min/--c-max")
    solver = _solver({k: v for k, v in cfg.items() if k not in ("c", "restarts")})
    solver = replace(solver, stop_on_exact=True)
    try:
        spec = SweepSpec(dims, rank, cv, int(cfg.get("restarts") or 10), solver, int(cfg.get("seed") or 0))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    res = run_sweep(spec, slope_max=float(cfg.get("slope_max", -0.5)),
                    floor_ratio=float(cfg.get("floor_ratio", 10.0)))
    out = _out(cfg, f"sweep_t{dims.label}_r{rank}.csv")
    io.atomic_write(out, res.csv())
    print(json.dumps({"dims": list(dims), "rank": rank, "csv": str(out), **res.classification}, indent=1))
    return EXIT_OK


def cmd_pipeline(cfg) -> int:
    dims, rank = _dims(cfg), _rank(cfg)
    solver = _solver(cfg)
    if "restarts" not in cfg:
        solver = replace(solver, restarts=100)
    out = _out(cfg, f"pipeline_t{dims.label}_r{rank}")
    res = run_pipeline(dims, rank, solver, out_dir=out, max_solutions=int(cfg.get("max_solutions", 5)))
    for st in res.stages:
        print(f"[{'ok' if st.ok else 'FAIL'}] {st.stage}: {st.detail}")
    if res.ok:
        print()
        print(res.program.to_text(), end="")
        return EXIT_OK
    if res.failed_stage == "verify":
        return EXIT_COUNTEREXAMPLE
    return EXIT_BEST_EFFORT


def cmd_sparsify(cfg) -> int:
    f, dims, _ = _load_input(cfg["input"])
    conf = SparsifyConfig(mode=cfg.get("mode", "auto"), seed=int(cfg.get("seed") or 0))
    try:
        g = sparsify_cycle(f, dims, conf)
    except (PreconditionError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    rep = sparsity_report(g)
    out = _out(cfg, str(Path(cfg["input"]).with_suffix("")) + "_sparse.json")
    io.save_factors(out, g, dims, {"sparsity": rep})
    print(json.dumps(rep))
    return EXIT_OK


def cmd_rationalize(cfg) -> int:
    f, dims, _ = _load_input(cfg["input"])
    plan = SnapPlan()
    if cfg.get("refit_budget"):
        plan = replace(plan, refit_budget=int(cfg["refit_budget"]))
    try:
        res = snap_and_refit(f, build_matmul_tensor(dims), plan)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _out(cfg, str(Path(cfg["input"]).with_suffix("")) + "_rational.json")
    io.save_factors(out, res.factors, dims)
    print(f"{'success' if res.success else 'failure'}: {res.message}; wrote {out}")
    if not res.success:
        return EXIT_BEST_EFFORT
    cert = verify_exact(res.factors, dims)
    print(cert.describe())
    return EXIT_OK if cert else EXIT_COUNTEREXAMPLE


def cmd_verify(cfg) -> int:
    f, dims, _ = _load_input(cfg["input"])
    if cfg.get("dims") is not None and _dims(cfg) != dims:
        raise UsageError(f"file holds T_{dims.label}, --dims asks for T_{_dims(cfg).label}")
    if f.rank == 0:
        print("counterexample: rank-0 decomposition")
        return EXIT_COUNTEREXAMPLE
    cert = verify_exact(f, dims)
    print(cert.describe())
    if not cert:
        return EXIT_COUNTEREXAMPLE
    text = export_bilinear(f, dims).to_text()
    print()
    print(text, end="")
    if cfg.get("out"):
        io.atomic_write(cfg["out"], text)
    return EXIT_OK


def cmd_export(cfg) -> int:
    f, dims, _ = _load_input(cfg["input"])
    cert = verify_exact(f, dims) if f.rank else None
    if not cert:
        print(cert.describe() if cert is not None else "counterexample: rank-0 decomposition")
        return EXIT_COUNTEREXAMPLE
    prog = export_bilinear(f, dims)
    fmt = cfg.get("format", "text")
    text = {
        "json": lambda: json.dumps(prog.to_dict(), indent=1) + "\n",
        "text": prog.to_text,
        "code": prog.to_pseudocode,
    }[fmt]()
    if cfg.get("out"):
        io.atomic_write(cfg["out"], text)
    else:
        print(text, end="")
    return EXIT_OK


COMMANDS = {
    "gen-tensor": cmd_gen_tensor,
    "decompose": cmd_decompose,
    "sweep": cmd_sweep,
    "pipeline": cmd_pipeline,
    "sparsify": cmd_sparsify,
    "rationalize": cmd_rationalize,
    "verify": cmd_verify,
    "export": cmd_export,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _merged(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"cpmatmul {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except io.FormatError as exc:
        print(f"cpmatmul {args.command}: parse error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TensorSizeError as exc:
        print(f"cpmatmul {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""File formats: factor JSON, tensor fixtures, solver traces, sweep tables."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from .cp import FactorTriple
from .tensor import MatMulDims, tensor_from_fixture


class FormatError(ValueError):
    """Malformed or inconsistent input file."""


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt_rational(v) -> str:
    fr = v if isinstance(v, Fraction) else Fraction(v)
    return f"{fr.numerator}/{fr.denominator}"


def _parse_scalar(v, rational: bool):
    if rational:
        if isinstance(v, bool):
            raise FormatError(f"bad rational entry {v!r}")
        if isinstance(v, int):
            return Fraction(v)
        if isinstance(v, str):
            try:
                return Fraction(v.strip())
            except (ValueError, ZeroDivisionError) as exc:
                raise FormatError(f"bad rational entry {v!r}") from exc
        raise FormatError(f"rational entries must be strings 'num/den', got {v!r}")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise FormatError(f"float entries must be numbers, got {v!r}")
    return float(v)


def factors_to_dict(f: FactorTriple, dims: MatMulDims, extra: dict | None = None) -> dict:
    rational = f.is_exact
    conv = _fmt_rational if rational else float
    out = {
        "dims": list(dims),
        "rank": f.rank,
        "scalar": "rational" if rational else "float",
    }
    for name, m in zip("ABC", f.factors()):
        out[name] = [[conv(v) for v in row] for row in m]
    if extra:
        out.update(extra)
    return out


def factors_from_dict(data: dict) -> tuple[FactorTriple, MatMulDims]:
    """Parse and validate a factor document; returns ``(factors, dims)``."""
    if not isinstance(data, dict):
        raise FormatError("factor file must hold a JSON object")
    for key in ("dims", "rank", "A", "B", "C"):
        if key not in data:
            raise FormatError(f"missing key {key!r}")
    try:
        dims = MatMulDims(*[int(d) for d in data["dims"]])
    except (TypeError, ValueError) as exc:
        raise FormatError(f"bad dims {data['dims']!r}") from exc
    rank = data["rank"]
    if isinstance(rank, bool) or not isinstance(rank, int) or rank < 0:
        raise FormatError(f"bad rank {rank!r}")
    scalar = data.get("scalar", "float")
    if scalar not in ("float", "rational"):
        raise FormatError(f"scalar must be 'float' or 'rational', got {scalar!r}")
    rational = scalar == "rational"
    mats = []
    for name, rows_expected in zip("ABC", dims.shape):
        rows = data[name]
        if not isinstance(rows, list) or len(rows) != rows_expected:
            raise FormatError(f"{name} must have {rows_expected} rows")
        for i, row in enumerate(rows):
            if not isinstance(row, list) or len(row) != rank:
                got = len(row) if isinstance(row, list) else type(row).__name__
                raise FormatError(f"{name} row {i + 1} has {got} entries, rank is {rank}")
        m = np.empty((rows_expected, rank), dtype=object if rational else float)
        for i, row in enumerate(rows):
            for j, v in enumerate(row):
                m[i, j] = _parse_scalar(v, rational)
        mats.append(m)
    return FactorTriple(*mats), dims


def save_factors(path, f: FactorTriple, dims, extra: dict | None = None) -> Path:
    dims = dims if isinstance(dims, MatMulDims) else MatMulDims(*dims)
    return atomic_write(path, json.dumps(factors_to_dict(f, dims, extra), indent=1) + "\n")


def load_factors(path) -> tuple[FactorTriple, MatMulDims, dict]:
    """Load a factor file; returns ``(factors, dims, raw_document)``."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    f, dims = factors_from_dict(data)
    return f, dims, data


TRACE_COLUMNS = ("restart", "iter", "phi", "mu", "step_norm", "accepted")
SWEEP_COLUMNS = ("c", "best_phi", "status", "restarts_used", "wall_time")


def trace_csv(outcomes) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for o in outcomes:
        for it, phi, mu, step, acc in o.trace:
            w.writerow([o.restart_index, it, repr(float(phi)), repr(float(mu)), repr(float(step)), int(bool(acc))])
    return buf.getvalue()


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([repr(float(r.c)), repr(float(r.best_phi)), r.status, r.restarts_used, f"{r.wall_time:.3f}"])
    return buf.getvalue()


# -- shipped data ------------------------------------------------------------

def _data_path(name: str):
    return resources.files("cpmatmul") / "data" / name


def shipped_factors(name: str) -> tuple[FactorTriple, MatMulDims]:
    """Load a shipped factor file, e.g. ``"strassen"`` or ``"t332_r15"``."""
    fname = name if name.endswith(".json") else f"{name}.json"
    data = json.loads(_data_path(fname).read_text())
    return factors_from_dict(data)


def shipped_factor_path(name: str) -> Path:
    fname = name if name.endswith(".json") else f"{name}.json"
    return Path(str(_data_path(fname)))


def eq3_fixture() -> np.ndarray:
    return tensor_from_fixture(json.loads(_data_path("t222_fixture.json").read_text()))


def table1() -> list[dict]:
    """Reference rank / border-rank bounds for small multiplication tensors."""
    return json.loads(_data_path("table1.json").read_text())["rows"]

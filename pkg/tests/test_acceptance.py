"""Acceptance suite.

Each test carries a ``criterion`` mark; a one-line PASS/FAIL/SKIP summary per
criterion is printed at the end of the run.  Criterion 9 takes hours on one
core and runs only with ``pytest --extended``.
"""

import json
import time
from collections import Counter

import numpy as np
import pytest

from cpmatmul.cli import EXIT_OK, main
from cpmatmul.cp import FactorTriple, compose, from_theta, jacobian, to_theta
from cpmatmul.io import factors_to_dict, load_factors, shipped_factors
from cpmatmul.rational import SnapPlan, export_bilinear, run_bilinear, snap_and_refit, verify_exact
from cpmatmul.solver import SolverConfig, constrained_step, multi_restart, project_to_sphere, solve
from cpmatmul.sparsify import SparsifyConfig, reconstruction_gap, sparsify_cycle
from cpmatmul.tensor import MatMulDims, apply_bilinear, build_matmul_tensor, vec

from conftest import exact_fits, matmul_loop

# Published seeds.  Changing them changes which restarts succeed.
SEED_T222 = 2024
SEED_T332 = 2024
SEED_SPARSIFY = 2024

EQ3 = {
    # nonzero (row, column) pairs of the 4 x 16 unfolding [T(:,:,1) ... T(:,:,4)]
    # read off the four printed slices, 1-based
    1: [(1, 1), (2, 3)],
    2: [(3, 1), (4, 3)],
    3: [(1, 2), (2, 4)],
    4: [(3, 2), (4, 4)],
}


def _detail(request, text):
    request.node.user_properties.append(("detail", text))


@pytest.mark.criterion(1, "T_222 equals the printed fixture bit-exactly, 8 ones, < 1 s")
def test_criterion_1_fixture(request):
    t0 = time.perf_counter()
    t = build_matmul_tensor((2, 2, 2))
    elapsed = time.perf_counter() - t0
    want = np.zeros((4, 4, 4), dtype=t.dtype)
    for k, ones in EQ3.items():
        for i, j in ones:
            want[i - 1, j - 1, k - 1] = 1
    assert t.shape == (4, 4, 4)
    assert np.array_equal(t, want) and t.tobytes() == want.tobytes()
    assert int(t.sum()) == 8
    assert elapsed < 1.0
    _detail(request, f"{elapsed * 1e3:.2f} ms")


@pytest.mark.criterion(2, "apply_bilinear equals vec(EF) exactly on 7 dims x 100 pairs, < 10 s")
def test_criterion_2_definitional(request):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    for dims in [(1, 1, 1), (2, 2, 2), (2, 3, 2), (3, 2, 2), (3, 3, 2), (3, 3, 3), (3, 4, 3)]:
        p, q, s = dims
        t = build_matmul_tensor(dims)
        for _ in range(100):
            e = rng.integers(-1000, 1001, size=(p, q))
            f = rng.integers(-1000, 1001, size=(q, s))
            got = apply_bilinear(t, e, f)
            want = vec(np.array(matmul_loop(e.tolist(), f.tolist()), dtype=object))
            assert [int(v) for v in got] == [int(v) for v in want]
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    _detail(request, f"{elapsed:.2f} s")


@pytest.mark.criterion(3, "Strassen and the rank-15 T_332 triple certify in exact arithmetic, < 5 s")
def test_criterion_3_golden(request):
    t0 = time.perf_counter()
    for name, dims in [("strassen", (2, 2, 2)), ("t332_r15", (3, 3, 2))]:
        f, d = shipped_factors(name)
        assert f.is_exact and tuple(d) == dims
        assert verify_exact(f, dims)
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    _detail(request, f"{elapsed:.2f} s")


@pytest.mark.criterion(4, "bilinear programs match EF exactly with 15 and 7 products")
def test_criterion_4_bilinear_oracle(request):
    rng = np.random.default_rng(4)
    for name, rank, trials in [("t332_r15", 15, 200), ("strassen", 7, 200)]:
        f, dims = shipped_factors(name)
        prog = export_bilinear(f, dims)
        p, q, s = dims
        for _ in range(trials):
            e = rng.integers(-99, 100, size=(p, q))
            fm = rng.integers(-99, 100, size=(q, s))
            cnt = Counter()
            g = run_bilinear(prog, e, fm, cnt)
            assert g.tolist() == matmul_loop(e.tolist(), fm.tolist())
            assert cnt["mul"] == rank
    _detail(request, "200 + 200 pairs")


def _fd_jacobian(f, step=1e-6):
    th = to_theta(f)
    cols = []
    for i in range(th.size):
        d = np.zeros_like(th)
        d[i] = step
        up = vec(compose(from_theta(th + d, f.shape, f.rank)))
        dn = vec(compose(from_theta(th - d, f.shape, f.rank)))
        cols.append((up - dn) / (2 * step))
    return np.column_stack(cols)


@pytest.mark.criterion(5, "Jacobian matches central differences (h=1e-6) to 1e-5 relative, < 30 s")
def test_criterion_5_gradient(request):
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    worst = 0.0
    cases = [((2, 2, 2), 7), ((3, 3, 2), 15), ((3, 3, 3), 23)]
    for i in range(20):
        dims, rank = cases[i % 3]
        shape = build_matmul_tensor(dims).shape
        f = FactorTriple(*(rng.normal(size=(n, rank)) for n in shape))
        j = jacobian(f)
        # relative to the largest Jacobian entry of the instance
        err = float(np.max(np.abs(j - _fd_jacobian(f))) / np.max(np.abs(j)))
        worst = max(worst, err)
    elapsed = time.perf_counter() - t0
    assert worst <= 1e-5
    assert elapsed < 30.0
    _detail(request, f"max rel err {worst:.1e}, {elapsed:.1f} s")


@pytest.mark.criterion(6, "constrained step is tangent (1e-8) and lands on the sphere (1e-10), < 10 s")
def test_criterion_6_step_geometry(request):
    rng = np.random.default_rng(6)
    t0 = time.perf_counter()
    worst_tan = worst_rad = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 60))
        c = float(rng.uniform(0.5, 500.0))
        m = rng.normal(size=(n, int(rng.integers(1, n + 1))))
        h = m @ m.T
        th0 = project_to_sphere(rng.normal(size=n), c)
        g = rng.normal(size=n) * 10.0 ** rng.uniform(-3, 3)
        mu = 10.0 ** rng.uniform(-4, 2)
        out = constrained_step(th0, g, h, mu, c)
        tan = abs(th0 @ out.delta) / (np.linalg.norm(th0) * max(np.linalg.norm(out.delta), 1e-300))
        rad = abs(out.theta @ out.theta - c) / c
        worst_tan, worst_rad = max(worst_tan, tan), max(worst_rad, rad)
    elapsed = time.perf_counter() - t0
    assert worst_tan <= 1e-8
    assert worst_rad <= 1e-10
    assert elapsed < 10.0
    _detail(request, f"tangency {worst_tan:.1e}, radius {worst_rad:.1e}")


def _criterion_7_run():
    """Exact fits of T_222 at R = 7, c = 36 in restart order, snapped and verified.

    Returns the float and rational factor JSON text plus run facts.
    """
    dims = (2, 2, 2)
    target = build_matmul_tensor(dims)
    cfg = SolverConfig(c=36.0, seed=SEED_T222, restarts=100, stop_on_exact=False)
    res = multi_restart(target, 7, cfg)
    for out in res.outcomes:
        if not out.best_phi <= 1e-16:
            continue
        snap = snap_and_refit(out.factors, target, SnapPlan(), SolverConfig(seed=SEED_T222))
        if snap.success and verify_exact(snap.factors, dims):
            fl = json.dumps(factors_to_dict(out.factors, MatMulDims(*dims)), indent=1)
            ra = json.dumps(factors_to_dict(snap.factors, MatMulDims(*dims)), indent=1)
            return fl, ra, out
    return None, None, None


@pytest.fixture(scope="module")
def criterion_7_result():
    t0 = time.perf_counter()
    fl, ra, out = _criterion_7_run()
    return fl, ra, out, time.perf_counter() - t0


@pytest.mark.criterion(7, f"T_222, R=7, c=36, <= 100 restarts, seed {SEED_T222}: exact fit survives snap + verify")
def test_criterion_7_t222(request, criterion_7_result):
    fl, ra, out, elapsed = criterion_7_result
    assert out is not None, "no verified rank-7 decomposition within 100 restarts"
    assert out.best_phi <= 1e-16
    assert elapsed < 600
    _detail(request, f"restart {out.restart_index}, phi={out.best_phi:.1e}, {elapsed:.1f} s")


@pytest.mark.criterion(11, "rerunning criterion 7 with the same seed gives identical factor JSON bytes")
def test_criterion_11_determinism(request, criterion_7_result):
    fl, ra, _, _ = criterion_7_result
    fl2, ra2, _ = _criterion_7_run()
    assert fl is not None
    assert fl.encode() == fl2.encode()
    assert ra.encode() == ra2.encode()
    _detail(request, f"{len(fl)} + {len(ra)} bytes")


@pytest.mark.criterion(8, f"T_332, R=15: verified 15-multiplication program via the pipeline command, seed {SEED_T332}")
def test_criterion_8_pipeline(request, tmp_path):
    t0 = time.perf_counter()
    code = main(["pipeline", "--dims", "3,3,2", "--rank", "15", "--restarts", "2000",
                 "--budget", "7200", "--seed", str(SEED_T332), "--out", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    if code == EXIT_OK:
        f, dims, _ = load_factors(tmp_path / "rational.json")
        assert f.rank == 15 and verify_exact(f, dims)
        assert export_bilinear(f, dims).rank == 15
        _detail(request, f"pipeline, {elapsed:.0f} s")
        return
    # stochastic search missed within budget: the declared fallback decides
    ok, msg = _criterion_8_fallback()
    _detail(request, f"pipeline missed ({elapsed:.0f} s); fallback: {msg}")
    assert ok, msg


def _criterion_8_fallback(seed=SEED_T332):
    f, dims = shipped_factors("t332_r15")
    target = build_matmul_tensor(dims)
    rng = np.random.default_rng(seed)
    noisy = FactorTriple(*(m.astype(float) + 1e-4 * rng.normal(size=m.shape) for m in f.factors()))
    # noise 1e-4 leaves phi ~ 1e-7, so an LM refit restores an exact fit first
    cfg = SolverConfig(c=None, seed=seed, constrained=False)
    fit = solve(target, 15, cfg, init=to_theta(noisy))
    if not fit.best_phi <= 1e-12:
        return False, f"refit reached phi={fit.best_phi:.1e}"
    snap = snap_and_refit(fit.factors, target, SnapPlan(), SolverConfig(seed=seed))
    if not snap.success:
        return False, snap.message
    cert = verify_exact(snap.factors, dims)
    return bool(cert), cert.describe()


@pytest.mark.criterion(8, f"T_332, R=15: verified 15-multiplication program via the pipeline command, seed {SEED_T332}")
def test_criterion_8_fallback_path(request):
    ok, msg = _criterion_8_fallback()
    _detail(request, "fallback path also verified" if ok else f"fallback failed: {msg}")
    assert ok, msg


@pytest.mark.criterion(9, "T_333 at R=20 (c=1e2,1e3,1e4) and R=22 (c=594) keep best phi above 1e-6")
@pytest.mark.extended
def test_criterion_9_negative_evidence(request):
    target = build_matmul_tensor((3, 3, 3))
    lines = []
    floors_hold = True
    for rank, c, restarts in [(20, 1e2, 100), (20, 1e3, 100), (20, 1e4, 100), (22, 594.0, 200)]:
        t0 = time.perf_counter()
        res = multi_restart(target, rank, SolverConfig(c=c, seed=9, restarts=restarts))
        best = res.best.best_phi
        floors_hold &= best > 1e-6
        lines.append(f"R={rank} c={c:g}: {best:.3e} ({time.perf_counter() - t0:.0f} s)")
    _detail(request, ", ".join(lines))
    assert floors_hold, "best phi fell below 1e-6; investigate: " + ", ".join(lines)


@pytest.mark.criterion(10, "sparsify_cycle on 20 exact T_222 fits keeps compose to 1e-8 and never raises L1")
def test_criterion_10_sparsifier(request):
    t0 = time.perf_counter()
    fits = exact_fits((2, 2, 2), 7, 20, c=36.0, seed=SEED_SPARSIFY)
    gaps, drops = [], 0
    for k, f in enumerate(fits):
        out = sparsify_cycle(f, (2, 2, 2), SparsifyConfig(seed=k))
        gaps.append(reconstruction_gap(f, out))
        assert out.l1() <= f.l1()
        drops += out.l1() < f.l1()
    elapsed = time.perf_counter() - t0
    assert max(gaps) <= 1e-8
    assert elapsed < 600
    _detail(request, f"max gap {max(gaps):.1e}, L1 lowered in {drops}/20, {elapsed:.0f} s")

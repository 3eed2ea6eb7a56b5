"""Acceptance suite: one test per criterion, each reporting a pass/fail line."""

import re
import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, kkt_simplex_projection, record_criterion
from oracles import (entropy_prox_oracle, grid_prox_oracle_1d, prox_objective, prox_oracle, refined_grid_min_1d,
                     set_distance)
from fomvi.baselines import anderson_vi, avi, gs_vi, robust_bellman, stopping_threshold, vi_robust
from fomvi.gap import duality_gap
from fomvi.instances import GarnetParams, gen_garnet
from fomvi.model import return_value
from fomvi.prox import prox_simplex_entropy, prox_y, project_simplex_l2
from fomvi.solver import Schedule, run_fom_vi
from fomvi.special import lambert_w

pytestmark = pytest.mark.slow

EPS = 0.1
AGREEMENT_CASES = [(size, seed) for size in (5, 10) for seed in (0, 1, 2)]


@pytest.fixture(autouse=True)
def _report_unfinished(request):
    yield
    match = re.match(r"test_criterion_(\d+)", request.node.name)
    if match and int(match.group(1)) not in ACCEPTANCE_LINES:
        record_criterion(int(match.group(1)), False, "check raised before completing")


def garnet(size, seed, kind="ellipsoidal", radius=None):
    return gen_garnet(GarnetParams(size, size, n_branch=0.5, discount=0.8, seed=seed), kind, radius)


_VI_CACHE = {}


def vi_reference(size, seed):
    if (size, seed) not in _VI_CACHE:
        _VI_CACHE[size, seed] = return_value(garnet(size, seed), vi_robust(garnet(size, seed), EPS).value)
    return _VI_CACHE[size, seed]


# ---- criterion 1 -------------------------------------------------------------


def _entropy_oracle(x0, g, tau):
    """Minimum of <g, x> + KL(x || x0) / tau over the simplex of length 2 or 3."""
    if len(x0) == 3:
        return entropy_prox_oracle(x0, g, tau)

    def objective(p):
        X = np.stack([p, 1 - p], -1)
        with np.errstate(divide="ignore", invalid="ignore"):
            kl = np.where(X > 0, X * np.log(X / x0), 0.0).sum(-1)
        return X @ g + kl / tau

    return refined_grid_min_1d(objective)[0]


def _kernel_case(rng, kind):
    A, S = int(rng.integers(1, 3)), int(rng.integers(2, 4))
    y0 = rng.dirichlet(np.ones(S), size=A)
    if kind == "kl" and S == 3 and rng.uniform() < 0.3:
        y0[:, int(rng.integers(S))] = 0.0
        y0 /= y0.sum(axis=1, keepdims=True)
    y_prev = rng.dirichlet(np.ones(S), size=A)
    if kind == "kl":
        y_prev = np.where(y0 > 0, y_prev, 0.0)
        y_prev /= y_prev.sum(axis=1, keepdims=True)
    scale = float(rng.choice([0.1, 1.0, 10.0]))
    g = rng.normal(size=(A, S)) * scale
    sigma = float(rng.choice([0.05, 0.5, 2.0]))
    radius = float(10 ** rng.uniform(-3, 0))
    return y0, y_prev, g, sigma, radius, A / 2.0


def test_criterion_1_prox_oracles():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    trials = 1000
    worst_obj, worst_feas, failures = 0.0, 0.0, []

    for _ in range(trials):
        z = rng.normal(size=int(rng.integers(2, 4))) * rng.choice([0.1, 1.0, 10.0])
        x = project_simplex_l2(z)
        ref = kkt_simplex_projection(z)
        diff = abs(0.5 * np.sum((x - z) ** 2) - 0.5 * np.sum((ref - z) ** 2))
        feas = max(abs(x.sum() - 1.0), float(max(0.0, -x.min())))
        worst_obj, worst_feas = max(worst_obj, diff), max(worst_feas, feas)
        if diff > 1e-4 or feas > 1e-7:
            failures.append(("simplex_l2", diff, feas))

    for _ in range(trials):
        n = int(rng.integers(2, 4))
        x0 = rng.dirichlet(np.ones(n))
        g = rng.normal(size=n) * rng.choice([0.1, 1.0, 10.0])
        tau = float(rng.choice([0.05, 0.5, 2.0]))
        x = prox_simplex_entropy(x0, g, tau)
        ours = float(x @ g + np.sum(np.where(x > 0, x * np.log(np.maximum(x, 1e-300) / x0), 0.0)) / tau)
        diff = abs(ours - _entropy_oracle(x0, g, tau))
        feas = max(abs(x.sum() - 1.0), float(max(0.0, -x.min())))
        worst_obj, worst_feas = max(worst_obj, diff), max(worst_feas, feas)
        if diff > 1e-4 or feas > 1e-7:
            failures.append(("simplex_entropy", diff, feas))

    for kind, norm in [("ellipsoidal", "l2"), ("ellipsoidal", "l1"), ("kl", "l2"), ("kl", "l1")]:
        for _ in range(trials):
            y0, y_prev, g, sigma, radius, beta = _kernel_case(rng, kind)
            y = prox_y(kind, norm, y_prev, g, sigma, y0, radius, beta=beta)
            ours = prox_objective(kind, norm, y, g, sigma, y_prev, beta)
            if y0.shape == (1, 2):
                ref, _ = grid_prox_oracle_1d(kind, norm, y_prev, g, sigma, y0, radius, beta)
            else:
                ref, _ = prox_oracle(kind, norm, y_prev, g, sigma, y0, radius, beta)
            diff = abs(ours - ref)
            feas = max(float(np.max(np.abs(y.sum(axis=1) - 1.0))), float(max(0.0, -y.min())),
                       max(0.0, set_distance(kind, y, y0) - radius))
            if kind == "kl":
                feas = max(feas, float(np.abs(y[y0 == 0]).sum()))
            worst_obj, worst_feas = max(worst_obj, diff), max(worst_feas, feas)
            if diff > 1e-4 or feas > 1e-7:
                failures.append((f"{kind}_{norm}", diff, feas))

    elapsed = time.perf_counter() - start
    passed = not failures and elapsed < 300
    detail = (f"6 ops x {trials} trials, {len(failures)} failures, max |objective diff| {worst_obj:.2e}, "
              f"max infeasibility {worst_feas:.2e}, {elapsed:.0f}s")
    record_criterion(1, passed, detail)
    assert passed, (detail, failures[:5])


# ---- criterion 2 -------------------------------------------------------------


def test_criterion_2_lambert_w():
    x = np.concatenate([[0.0], np.logspace(-12, 8, 9999)])
    w = lambert_w(x)
    back = w * np.exp(w)
    rel = np.abs(back - x) / np.where(x > 0, x, 1.0)
    passed = bool(rel.max() <= 1e-12) and x.size == 10**4
    detail = f"max relative round-trip error {rel.max():.2e} on {x.size} points in [0, 1e8]"
    record_criterion(2, passed, detail)
    assert passed, detail


# ---- criterion 3 -------------------------------------------------------------


def test_criterion_3_contraction():
    rng = np.random.default_rng(3)
    worst_excess = -np.inf
    count = 0
    for kind in ("ellipsoidal", "kl"):
        for seed in range(5):
            inst = garnet(5, seed, kind)
            bound = inst.value_bound
            for _ in range(100):
                v = rng.uniform(0, bound, size=5)
                w = rng.uniform(0, bound, size=5) if rng.uniform() < 0.5 else v + rng.normal(scale=1.0, size=5)
                Fv = np.array([robust_bellman(inst, v, s, tol=1e-6).value for s in range(5)])
                Fw = np.array([robust_bellman(inst, w, s, tol=1e-6).value for s in range(5)])
                excess = np.max(np.abs(Fv - Fw)) - 0.8 * np.max(np.abs(v - w))
                worst_excess = max(worst_excess, excess)
                count += 1
    passed = worst_excess <= 4e-6
    detail = f"{count} pairs, max of ||F(v)-F(w)|| - 0.8||v-w|| = {worst_excess:.2e} (allowed 4e-6)"
    record_criterion(3, passed, detail)
    assert passed, detail


# ---- criterion 4 -------------------------------------------------------------


def test_criterion_4_cross_method_agreement():
    start = time.perf_counter()
    allowed = 4 * stopping_threshold(EPS, 0.8)
    worst = 0.0
    rows = []
    for size, seed in AGREEMENT_CASES:
        inst = garnet(size, seed)
        values = {"vi": vi_reference(size, seed)}
        for name, solver in (("gs_vi", gs_vi), ("avi", avi), ("anderson_vi", lambda i, e: anderson_vi(i, e, m=5))):
            res = solver(inst, EPS)
            assert res.converged
            values[name] = return_value(inst, res.value)
        spread = max(values.values()) - min(values.values())
        worst = max(worst, spread)
        rows.append((size, seed, spread))
    elapsed = time.perf_counter() - start
    passed = worst <= allowed and elapsed < 600
    detail = (f"{len(AGREEMENT_CASES)} Garnet instances, max spread of return values {worst:.4f} "
              f"(allowed {allowed:.4f}), {elapsed:.0f}s")
    record_criterion(4, passed, detail)
    assert passed, (detail, rows)


# ---- criterion 5 -------------------------------------------------------------


def test_criterion_5_fomvi_correctness():
    start = time.perf_counter()
    rows = []
    ok = True
    for size, seed in AGREEMENT_CASES:
        inst = garnet(size, seed)
        rep = run_fom_vi(inst, "l2", Schedule(p=2, q=2, eps=EPS))
        diff = abs(rep.gap.worst_case_value - vi_reference(size, seed))
        rows.append((size, seed, rep.gap.certified_gap, diff))
        ok &= rep.converged and rep.gap.certified_gap <= EPS / 2 and diff <= 2 * EPS
    elapsed = time.perf_counter() - start
    passed = bool(ok) and elapsed < 900
    detail = (f"{len(rows)} instances, max certified gap {max(r[2] for r in rows):.4f} (allowed 0.05), "
              f"max |return - VI| {max(r[3] for r in rows):.4f} (allowed 0.2), {elapsed:.0f}s")
    record_criterion(5, passed, detail)
    assert passed, (detail, rows)


# ---- criterion 6 -------------------------------------------------------------


def test_criterion_6_kl_capability():
    inst = garnet(10, 0, "kl")
    rep = run_fom_vi(inst, "l2", Schedule(p=2, q=2, eps=EPS))
    # independent recheck at a tighter evaluator tolerance
    recheck = duality_gap(inst, rep.x, rep.y, tol=1e-4)
    passed = rep.converged and recheck.converged and recheck.certified_gap <= EPS / 2
    detail = (f"Garnet KL S=A=10 (alpha={inst.radius:.3f}): {rep.iterations} iterations, "
              f"rechecked certified gap {recheck.certified_gap:.4f} (allowed 0.05), {rep.elapsed_seconds:.0f}s")
    record_criterion(6, passed, detail)
    assert passed, detail


# ---- criterion 7 -------------------------------------------------------------


def _rate_slope(q, epochs, period):
    inst = garnet(10, 0)
    rep = run_fom_vi(inst, "l2", Schedule(p=2, q=q, max_epochs=epochs, gap_check_period=period),
                     gap_tolerance=0.0, gap_eval_tol=1e-6)
    pts = np.array([(r["iteration"], r["certified_gap"]) for r in rep.trace if r["certified_gap"] is not None])
    final = pts[pts[:, 0] >= pts[-1, 0] / 10]
    return float(np.polyfit(np.log(final[:, 0]), np.log(final[:, 1]), 1)[0]), len(final), int(pts[-1, 0])


def test_criterion_7_rate_exponent():
    results = {1: _rate_slope(1, 141, 10), 2: _rate_slope(2, 30, 2)}
    checks = {q: slope <= -q / (q + 1) + 0.25 for q, (slope, _, _) in results.items()}
    passed = all(checks.values())
    detail = "; ".join(f"q={q}: slope {s:.2f} over T in [{t // 10}, {t}] ({n} points, bound {-q / (q + 1) + 0.25:.3f})"
                       for q, (s, n, t) in results.items())
    record_criterion(7, passed, detail)
    assert passed, detail


# ---- criterion 8 -------------------------------------------------------------


def test_criterion_8_zero_radius_reduction():
    worst = 0.0
    rows = []
    for kind in ("ellipsoidal", "kl"):
        inst = garnet(5, 4, kind, radius=0.0)
        v = np.zeros(5)
        thr = EPS / 10 * 0.2 / (2 * 0.8)
        while True:
            nxt = (inst.costs + 0.8 * inst.nominal_kernel @ v).min(axis=1)
            done = np.max(np.abs(nxt - v)) <= thr
            v = nxt
            if done:
                break
        ref = return_value(inst, v)
        values = {
            "fomvi_l2": run_fom_vi(inst, "l2", Schedule(eps=EPS)).gap.worst_case_value,
            "fomvi_l1": run_fom_vi(inst, "l1", Schedule(eps=EPS)).gap.worst_case_value,
            "vi": return_value(inst, vi_robust(inst, EPS).value),
            "gs_vi": return_value(inst, gs_vi(inst, EPS).value),
            "avi": return_value(inst, avi(inst, EPS).value),
            "anderson_vi": return_value(inst, anderson_vi(inst, EPS).value),
        }
        for name, val in values.items():
            worst = max(worst, abs(val - ref))
            rows.append((kind, name, val - ref))
    passed = worst <= EPS
    detail = f"6 methods x 2 set kinds at alpha=0, max |return - nominal| {worst:.4f} (allowed {EPS})"
    record_criterion(8, passed, detail)
    assert passed, (detail, rows)


# ---- criterion 9 -------------------------------------------------------------


def _cli(*args, cwd):
    return subprocess.run([sys.executable, "-m", "fomvi", *args], cwd=cwd, capture_output=True, text=True, check=False)


def _strip_elapsed(text):
    lines = text.splitlines()
    col = lines[0].split(",").index("elapsed_seconds")
    return [",".join(c for i, c in enumerate(line.split(",")) if i != col) for line in lines]


def test_criterion_9_determinism(tmp_path):
    same = True
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        assert _cli("gen", "garnet", "--states", "6", "--actions", "4", "--seed", "5", "--kind", "kl",
                    "-o", "inst.json", cwd=d).returncode == 0
        for method in ("fomvi", "anderson_vi"):
            res = _cli("solve", "inst.json", "--method", method, "--run-id", method, "--out-dir", ".", cwd=d)
            assert res.returncode == 0, res.stderr
    a, b = tmp_path / "a", tmp_path / "b"
    same &= (a / "inst.json").read_bytes() == (b / "inst.json").read_bytes()
    for method in ("fomvi", "anderson_vi"):
        ta = (a / f"{method}.trace.csv").read_text()
        tb = (b / f"{method}.trace.csv").read_text()
        same &= _strip_elapsed(ta) == _strip_elapsed(tb)
    detail = "instance bytes and trace CSVs (minus elapsed_seconds) identical across two processes"
    record_criterion(9, bool(same), detail if same else "outputs differ between identical runs")
    assert same

"""Acceptance criteria, one test per criterion.

Every test prints a single ``[criterion N] PASS|FAIL`` line; the lines are
also repeated in the pytest terminal summary. Tolerances are pinned here.
Criteria 8, 9 and 11 run full suites and are marked slow.
"""
import math
import os
import shutil
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import norm

import conftest
from hrmsbo import harness
from hrmsbo.acquisition import (
    AcquisitionSpec,
    Incumbent,
    expected_improvement,
    propose_batch_qei,
    propose_batch_ts,
    propose_batch_ucb_pe,
    propose_single,
)
from hrmsbo.design import latin_hypercube
from hrmsbo.global_opt import Box, direct_minimize
from hrmsbo.gp import Dataset, Hyperpriors, fit, log_map_gradient, log_map_objective, predict
from hrmsbo.kernel import KernelHyperparams, covariance_matrix, matern32
from hrmsbo.objectives import Forrester, branin, forrester
from hrmsbo.sampling import SamplingPlan, StopRule, run_gpbo
from reference_loop import reference_ss_loop

REPO = Path(__file__).resolve().parents[1]

# frozen oracles, recomputed independently below where cheap
BRANIN_MIN = 0.397887
FORRESTER_MIN = -6.02074
FORRESTER_XMIN = 0.75725

# suite runtime bounds are stated for 8 concurrent workers; runs are independent,
# so the bound is checked against serial CPU time divided by 8
REFERENCE_WORKERS = 8


def record(n: int, ok: bool, detail: str) -> None:
    line = f"[criterion {n:>2}] {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    conftest.ACCEPTANCE_LINES.append(line)
    assert ok, line


def params(ls, sf=1.0, sn=0.1, mean=0.0):
    return KernelHyperparams(tuple(np.log(np.atleast_1d(ls))), math.log(sf), math.log(sn), mean)


# --- 1 ------------------------------------------------------------------------


def test_c01_gp_exactness():
    t0 = time.perf_counter()
    r = np.random.default_rng(101)
    worst_mu = worst_var = 0.0
    for _ in range(20):
        n, d = int(r.integers(2, 31)), int(r.integers(1, 4))
        X = r.random((n, d))
        y = np.sin(3 * X).sum(axis=1) + r.standard_normal()
        p = params(r.uniform(0.1, 0.5, d), sf=float(r.uniform(0.5, 3.0)), sn=1e-9)
        mu, var = predict(fit(Dataset(X, y), p), X)
        worst_mu = max(worst_mu, float(np.max(np.abs(mu - y))))
        worst_var = max(worst_var, float(np.max(var)))
    dt = time.perf_counter() - t0
    record(1, worst_mu <= 1e-6 and worst_var < 1e-6 and dt < 5,
           f"GP exactness: max |mu-y| {worst_mu:.2e} (tol 1e-6), max var {worst_var:.2e} (< 1e-6), {dt:.2f}s (< 5s)")


# --- 2 ------------------------------------------------------------------------


def test_c02_kernel_oracle_and_psd():
    t0 = time.perf_counter()
    r = np.random.default_rng(102)
    p = params([1.0], sf=1.3)
    rs = r.uniform(0, 12, 1000)
    sf2 = 1.3**2
    oracle = np.array([sf2 * (1 + math.sqrt(3) * v) * math.exp(-math.sqrt(3) * v) for v in rs])
    err = float(np.max(np.abs(np.asarray(matern32(rs, p)) - oracle)))
    min_eig = math.inf
    for _ in range(100):
        n, d = int(r.integers(1, 60)), int(r.integers(1, 6))
        X = r.uniform(-2, 2, (n, d))
        K = covariance_matrix(X, X, params(r.uniform(0.05, 3.0, d), sf=float(r.uniform(0.3, 5))))
        min_eig = min(min_eig, float(np.linalg.eigvalsh(K).min()))
    dt = time.perf_counter() - t0
    record(2, err <= 1e-12 and min_eig >= -1e-10 and dt < 5,
           f"kernel oracle max err {err:.1e} (tol 1e-12); min eig {min_eig:.2e} (>= -1e-10); {dt:.2f}s (< 5s)")


# --- 3 ------------------------------------------------------------------------


def test_c03_ei_monte_carlo():
    t0 = time.perf_counter()
    sigma, f_best = 1.7, 2.0
    n = 1_000_000
    # stratified inverse-CDF sample: one uniform per equal-probability stratum
    u = (np.arange(n) + np.random.default_rng(103).random(n)) / n
    eps = norm.ppf(u)
    worst = 0.0
    for z in (-3.0, -1.0, 0.0, 1.0, 3.0):
        mu = f_best - z * sigma
        mc = float(np.mean(np.maximum(f_best - (mu + sigma * eps), 0.0)))
        ei = expected_improvement(mu, sigma, Incumbent(None, f_best))
        worst = max(worst, abs(ei - mc) / ei)
    zero = [expected_improvement(m, 0.0, Incumbent(None, f_best)) for m in (-5.0, 2.0, 9.0)]
    dt = time.perf_counter() - t0
    record(3, worst <= 0.02 and zero == [0.0, 0.0, 0.0] and dt < 30,
           f"EI vs 1e6-sample MC worst rel err {worst:.2e} (tol 2%); EI at sigma=0 {zero}; {dt:.2f}s (< 30s)")


# --- 4 ------------------------------------------------------------------------


def test_c04_direct():
    t0 = time.perf_counter()
    problems = []

    def watched(f, box, budget):
        seen = []

        def g(x):
            seen.append(np.array(x, copy=True))
            return f(x)

        res = direct_minimize(g, box, budget)
        pts = np.array(seen)
        if len(seen) > budget or res.evals_used != len(seen):
            problems.append(f"budget violated ({len(seen)} > {budget})")
        if not (box.contains(pts) and box.contains(res.x_min[None])):
            problems.append("point outside box")
        return res

    b = watched(lambda x: float(branin(x[None])[0]), Box((-5.0, 0.0), (10.0, 15.0)), 2000)
    f = watched(lambda x: float(forrester(x[0])), Box((0.0,), (1.0,)), 500)
    dt = time.perf_counter() - t0
    ok = (abs(b.f_min - BRANIN_MIN) <= 1e-3 and abs(f.f_min - FORRESTER_MIN) <= 1e-3
          and abs(f.x_min[0] - FORRESTER_XMIN) <= 1e-3 and not problems and dt < 10)
    record(4, ok, f"DIRECT Branin {b.f_min:.6f} (oracle {BRANIN_MIN}), Forrester {f.f_min:.6f} at "
                  f"x={f.x_min[0]:.5f} (oracle {FORRESTER_MIN} at {FORRESTER_XMIN}), tol 1e-3; "
                  f"invariant problems {problems}; {dt:.2f}s (< 10s)")


# --- 5 ------------------------------------------------------------------------


def test_c05_map_objective():
    t0 = time.perf_counter()
    pri = Hyperpriors()
    p = params([1.5], sf=2.0, sn=25.0, mean=3.0)
    got = log_map_objective(p, Dataset(np.array([[0.4]]), [7.0]), pri)
    var = 4.0 + 625.0
    prior = (-0.5 * ((3.0 - pri.mean_mu) / pri.mean_sigma) ** 2 - math.log(pri.mean_sigma)
             - 0.5 * math.log(2 * math.pi)
             - sum(math.log(math.log(b) - math.log(a))
                   for a, b in (pri.lengthscale, pri.amplitude, pri.noise_std)))
    want = -0.5 * math.log(2 * math.pi * var) - 0.5 * (7.0 - 3.0) ** 2 / var + prior
    scalar_err = abs(got - want)

    wide = Hyperpriors(0.0, 10.0, (0.01, 5.0), (0.1, 10.0), (1e-3, 2.0))
    worst_rel = 0.0
    r = np.random.default_rng(105)
    h = 1e-5
    for k in range(10):
        d = 1 + k % 3
        X = r.random((10 + k, d))
        data = Dataset(X, np.cos(4 * X).sum(axis=1) + 0.1 * r.standard_normal(len(X)))
        lo, hi = wide.log_bounds(d).T
        theta = np.append(r.uniform(lo + 0.2, hi - 0.2), r.normal())
        grad = log_map_gradient(KernelHyperparams.from_vector(theta), data, wide)
        for j in range(len(theta)):
            e = np.zeros_like(theta)
            e[j] = h
            fd = (log_map_objective(KernelHyperparams.from_vector(theta + e), data, wide)
                  - log_map_objective(KernelHyperparams.from_vector(theta - e), data, wide)) / (2 * h)
            worst_rel = max(worst_rel, abs(grad[j] - fd) / max(abs(fd), 1.0))
    dt = time.perf_counter() - t0
    record(5, scalar_err <= 1e-10 and worst_rel <= 1e-4 and dt < 10,
           f"n=1 closed form err {scalar_err:.1e} (tol 1e-10); analytic vs central-difference gradient "
           f"worst rel err {worst_rel:.1e} (tol 1e-4) on 10 datasets; {dt:.2f}s (< 10s)")


# --- 6 ------------------------------------------------------------------------


def test_c06_reduction_identities():
    t0 = time.perf_counter()
    r = np.random.default_rng(106)
    X = r.random((9, 1))
    model = fit(Dataset(X, forrester(X[:, 0]) + 0.3 * r.standard_normal(9)), params([0.15], sf=5.0, sn=0.3))
    box = Box((0.0,), (1.0,))
    batch = {"EI": propose_batch_qei, "UCB": propose_batch_ucb_pe, "TS": propose_batch_ts}
    batch_ok = {}
    for kind, fn in batch.items():
        spec = AcquisitionSpec(kind)
        one = propose_single(model, spec, box, rng=np.random.default_rng(7))
        many = fn(model, spec, box, rng=np.random.default_rng(7))
        batch_ok[kind] = many.shape == (1, 1) and np.array_equal(many[0], one)

    obj = Forrester(0.4)
    pri = Hyperpriors(0.0, 10.0, (0.01, 2.0), (0.1, 20.0), (1e-4, 1.0))
    trace_ok = {}
    for kind in ("EI", "UCB", "TS"):
        spec = AcquisitionSpec(kind)
        ref = reference_ss_loop(obj, obj.box, spec, pri, 18, np.random.default_rng(61), 2)
        rec = run_gpbo(obj, obj.box, spec, SamplingPlan(1, 1), pri, StopRule(18), np.random.default_rng(61),
                       n_restarts=2)
        got = [(it.proposals[0], it.evaluations[0][1], it.hyperparams, it.incumbent_f) for it in rec.iterations]
        trace_ok[kind] = got == ref and len(ref) == 8
    dt = time.perf_counter() - t0
    record(6, all(batch_ok.values()) and all(trace_ok.values()) and dt < 60,
           f"q=1 batch == single {batch_ok}; plan (1,1) trace == reference loop {trace_ok}; {dt:.2f}s (< 60s)")


# --- 7 ------------------------------------------------------------------------


def test_c07_latin_hypercube():
    t0 = time.perf_counter()
    r = np.random.default_rng(107)
    results = {}
    for n, d in ((20, 2), (110, 11), (1000, 3)):
        box = Box(np.full(d, -1.0), np.arange(1, d + 1, dtype=float))
        Xs = latin_hypercube(n, box, r)
        occ = np.floor((Xs - box.lo) / box.width * n).astype(int).clip(0, n - 1)
        results[(n, d)] = all(np.array_equal(np.sort(occ[:, k]), np.arange(n)) for k in range(d))
    dt = time.perf_counter() - t0
    record(7, all(results.values()) and dt < 5, f"LH occupancy permutation {results}; {dt:.2f}s (< 5s)")


# --- suites for 8, 9, 11 ------------------------------------------------------


def run_timed(cfg):
    t0 = time.perf_counter()
    res = harness.run_suite(cfg)
    return res, time.perf_counter() - t0


def summary_bytes(out: Path) -> dict:
    return {name: (out / name).read_bytes() for name in (*harness.TABLES, harness.MANIFEST)}


@pytest.fixture(scope="module")
def desk_suite(tmp_path_factory):
    cfg = harness.ExperimentConfig.from_yaml(REPO / "configs" / "desk_grid.yaml")
    cfg = replace(cfg, output_dir=str(tmp_path_factory.mktemp("desk") / "out"), workers=os.cpu_count() or 1)
    res, dt = run_timed(cfg)
    return cfg, res, dt


HEADLINE_PLANS = ((1, 1), (3, 3))


def headline_stats(rows):
    """y_hat spread per (acquisition, plan) and paired RMSE wins of RS3/MS3 over SS."""
    by = {(r["acquisition"], r["rs"], r["ms"], r["repetition"]): r for r in rows}
    acqs = sorted({r["acquisition"] for r in rows})
    reps = sorted({r["repetition"] for r in rows})
    spread, wins = {}, {}
    for a in acqs:
        for rs, ms in HEADLINE_PLANS:
            spread[(a, rs)] = float(np.std([by[(a, rs, ms, k)]["y_hat"] for k in reps]))
        wins[a] = [by[(a, 3, 3, k)]["rmse"] < by[(a, 1, 1, k)]["rmse"] for k in reps]
    pooled = [w for a in acqs for w in wins[a]]
    frac = float(np.mean(pooled))
    a_ok = any(spread[(a, 3)] < spread[(a, 1)] for a in acqs)
    return {"spread": spread, "wins": {a: float(np.mean(w)) for a, w in wins.items()}, "paired_frac": frac,
            "pairs": len(pooled), "a": a_ok, "b": frac >= 0.6}


@pytest.fixture(scope="module")
def headline_suite(tmp_path_factory):
    cfg = harness.ExperimentConfig.from_yaml(REPO / "configs" / "hrms_headline.yaml")
    cfg = replace(cfg, output_dir=str(tmp_path_factory.mktemp("headline") / "out"), workers=os.cpu_count() or 1)
    res, dt = run_timed(cfg)
    return cfg, res, dt


# --- 8 ------------------------------------------------------------------------


@pytest.mark.slow
def test_c08_accounting_identity(desk_suite):
    cfg, res, dt = desk_suite
    bad = [k.run_id for k, rec in res.records if not rec.check_accounting()]
    identity = all(r["function_evaluations"] == r["seeds"] + r["iterations"] * r["rs"] * r["ms"] for r in res.rows)
    problems = harness.verify(cfg.output_dir)
    scaled = dt * cfg.workers / REFERENCE_WORKERS
    ok = len(res.records) == 144 and not bad and identity and not problems and scaled < 20 * 60
    record(8, ok, f"desk suite {len(res.records)} runs (144 expected), identity failures {bad}, verify "
                  f"problems {problems}; {dt / 60:.1f} min on {cfg.workers} worker(s) = "
                  f"{scaled / 60:.1f} min at {REFERENCE_WORKERS} (< 20)")


# --- 9 ------------------------------------------------------------------------


def fmt_stats(s) -> str:
    spread = ", ".join(f"{a} SS {s['spread'][(a, 1)]:.1f} vs RS3/MS3 {s['spread'][(a, 3)]:.1f}"
                       for a in sorted(s["wins"]))
    wins = ", ".join(f"{a} {w:.0%}" for a, w in sorted(s["wins"].items()))
    return (f"(a) y_hat std {spread} -> {'ok' if s['a'] else 'no'}; (b) RS3/MS3 lower RMSE in "
            f"{s['paired_frac']:.0%} of {s['pairs']} pairs ({wins}; need 60%) -> {'ok' if s['b'] else 'no'}")


def is_marginal(s) -> bool:
    # one sub-claim holds and the paired fraction is within one tenth of the bar
    return (s["a"] or s["b"]) and s["paired_frac"] >= 0.5


@pytest.mark.slow
def test_c09_hrms_headline(headline_suite):
    cfg, res, dt = headline_suite
    s = headline_stats(res.rows)
    failures = sum(r["termination"] != "budget_exhausted" for r in res.rows)
    blocks = [s]
    total = dt
    if not (s["a"] and s["b"]) and is_marginal(s):
        for k in (1, 2):
            other = replace(cfg, master_seed=cfg.master_seed + k,
                            output_dir=str(Path(cfg.output_dir).parent / f"block{k}"))
            more, t = run_timed(other)
            total += t
            blocks.append(headline_stats(more.rows))
    passed = [b["a"] and b["b"] for b in blocks]
    scaled = total * cfg.workers / REFERENCE_WORKERS
    ok = (passed[0] if len(blocks) == 1 else sum(passed) >= 2) and failures == 0 and scaled < 30 * 60
    detail = " | ".join(f"block {i}: {fmt_stats(b)}" for i, b in enumerate(blocks))
    record(9, ok, f"HRMS headline, {len(res.rows)} runs at 200 evals, {failures} failed runs; {detail}; "
                  f"blocks passed {sum(passed)}/{len(blocks)}; {total / 60:.1f} min on {cfg.workers} worker(s) "
                  f"= {scaled / 60:.1f} min at {REFERENCE_WORKERS} (< 30)")


# --- 10 -----------------------------------------------------------------------


def test_c10_jitter_robustness(tmp_path):
    # near noise-free objective and a noise prior that believes it: repeated rows
    # make K + sigma_n^2 I numerically singular, so the ladder has to step in
    cfg = harness.ExperimentConfig(
        objective_id="forrester", objective_params={"noise_std": 1e-9}, acquisitions=("EI", "UCB", "TS"),
        plans=((10, 1), (10, 3)), repetitions=2, max_function_evals=70, master_seed=10,
        hyperpriors=Hyperpriors(0.0, 10.0, (0.01, 2.0), (0.1, 20.0), (1e-10, 1e-8)),
        output_dir=str(tmp_path / "c10"))
    res, dt = run_timed(cfg)
    engaged = sum(r["max_jitter"] > 0 for r in res.rows)
    terms = sorted({r["termination"] for r in res.rows})
    problems = harness.verify(cfg.output_dir)
    ok = (len(res.rows) == cfg.n_runs and engaged > 0 and terms == ["budget_exhausted"] and not problems
          and dt < 300)
    record(10, ok, f"RS=10 on noise-free Forrester: {len(res.rows)}/{cfg.n_runs} runs completed, jitter "
                   f"engaged in {engaged}, terminations {terms}, verify problems {problems}; {dt:.1f}s (< 300s)")


# --- 11 -----------------------------------------------------------------------


@pytest.mark.slow
def test_c11_determinism(desk_suite, headline_suite, tmp_path):
    same = {}
    for name, (cfg, _, _) in (("desk", desk_suite), ("headline", headline_suite)):
        again = replace(cfg, output_dir=str(tmp_path / name))
        harness.run_suite(again)
        a, b = summary_bytes(Path(cfg.output_dir)), summary_bytes(tmp_path / name)
        same[name] = [k for k in a if a[k] != b[k]]
        shutil.rmtree(tmp_path / name)
    ok = not any(same.values())
    record(11, ok, f"rerun with the same master seed: differing summary files {same} (none allowed)")

"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""

import time
from math import sqrt

import numpy as np
import pytest

from hout.decomp import (BOUNDS, approx_rank1_decompose, rate_bound, sphere_maxabs,
                         verify_entry_bound)
from hout.experiments import (SUT_BETA, LorenzSpec, NonGaussianSpec, decay_study,
                              forecast_study, polynomial_study, random_polys)
from hout.sigma import MomentSet, empirical_moments, hout_ensemble, sut
from hout.tensor import frobenius_norm, random_symmetric, tensor_power

TAU = 1e-5


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return emit


def _rel(a, b):
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))


def _sample_moments(seed, d, n=1000):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, d))
    A = np.eye(d) + rng.standard_normal((d, d)) / sqrt(d)
    B = 0.5 * rng.standard_normal((d, d)) / sqrt(d)
    X = rng.standard_normal(d) + Z @ A.T + (np.sign(Z) * Z * Z) @ B.T
    return empirical_moments(X)


def test_c1_moment_matching(report):
    t0 = time.perf_counter()
    worst = {"mean": 0.0, "cov": 0.0, "skew": 0.0, "kurt": 0.0}
    for seed in range(100):
        m = _sample_moments(seed, 1 + seed % 3)
        ens, _ = hout_ensemble(m, TAU)
        got = ens.moments()
        worst["mean"] = max(worst["mean"], _rel(got.mean, m.mean))
        worst["cov"] = max(worst["cov"], _rel(got.cov, m.cov))
        worst["skew"] = max(worst["skew"], frobenius_norm(got.skew - m.skew))
        worst["kurt"] = max(worst["kurt"], frobenius_norm(got.kurt - m.kurt))
    elapsed = time.perf_counter() - t0
    ok = (worst["mean"] <= 1e-9 and worst["cov"] <= 1e-9 and worst["skew"] < TAU
          and worst["kurt"] < TAU and elapsed < 30)
    report("C1 moment matching",
           ok, ", ".join(f"{k}={v:.2e}" for k, v in worst.items()) + f", {elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def poly_rows():
    polys = random_polys(d=2, seed=0)
    return polynomial_study(NonGaussianSpec(d=2, ensemble_size=20000, seed=0), polys,
                            tau=TAU, betas=(SUT_BETA,), gammas=(None,))


def _pick(rows, method, n, c=None):
    return [r for r in rows if r["method"] == method and r["n"] == n
            and (c is None or r["c"] == c)]


def test_c2a_hout_exactness(report, poly_rows):
    bad = []
    for n in (2, 3, 4):
        for r in _pick(poly_rows, "HOUT", n):
            if r["mean_err"] > TAU + 5 * r["mean_se"]:
                bad.append(("mean", n, r["c"]))
    for r in _pick(poly_rows, "HOUT", 2):
        if r["var_err"] > TAU + 5 * r["var_se"]:
            bad.append(("var", 2, r["c"]))
    report("C2a HOUT mean n<=4 and variance n=2 within tau + 5 SE", not bad, f"violations={bad}")
    assert not bad


def test_c2b_sut_fails_even_degree(report, poly_rows):
    c = max(r["c"] for r in poly_rows)
    s4 = _pick(poly_rows, "SUT", 4, c)[0]
    s2 = _pick(poly_rows, "SUT", 2, c)[0]
    h4 = _pick(poly_rows, "HOUT", 4, c)[0]
    h2 = _pick(poly_rows, "HOUT", 2, c)[0]
    ok = (s4["mean_err"] > TAU + 5 * s4["mean_se"]
          and s2["var_err"] > TAU + 5 * s2["var_se"]
          and h4["mean_err"] < s4["mean_err"] and h2["var_err"] < s2["var_err"])
    report("C2b SUT exceeds bound (mean n=4, variance n=2) and HOUT beats it", ok,
           f"SUT mean n=4 {s4['mean_err']:.3g} vs bound {TAU + 5 * s4['mean_se']:.3g}; "
           f"SUT var n=2 {s2['var_err']:.3g} vs bound {TAU + 5 * s2['var_se']:.3g}")
    assert ok


def test_c2c_sut_fails_odd_degree(report, poly_rows):
    # Odd-degree mean errors of SUT at the largest c.  Left unforced: see the
    # README note on symmetric data, where these errors sit inside MC noise.
    c = max(r["c"] for r in poly_rows)
    rows = [_pick(poly_rows, "SUT", n, c)[0] for n in (3, 5)]
    ok = all(r["mean_err"] > TAU + 5 * r["mean_se"] for r in rows)
    report("C2c SUT exceeds bound for mean at n=3,5", ok,
           "; ".join(f"n={r['n']} err={r['mean_err']:.3g} bound={TAU + 5 * r['mean_se']:.3g}"
                     for r in rows))
    assert ok


def test_c3_decay(report):
    t0 = time.perf_counter()
    rows = decay_study(orders=(3, 4), dims=(2, 10), count=5, tau=1e-10, seed=0)
    elapsed = time.perf_counter() - t0
    tensors = {(r["order"], r["dim"], r["tensor"]) for r in rows}
    decreasing = all(r["residual_after"] < r["residual_before"] for r in rows)
    reached = all(min(r["residual_after"] for r in rows
                      if (r["order"], r["dim"], r["tensor"]) == key) <= 1e-10 for key in tensors)
    within = all(r["ratio"] <= r["rate_bound"] for r in rows)
    # sphere-oracle cross-check at d=2: the extracted eigenvalue is the dominant one
    confirmed = violations = 0
    seeds = np.random.SeedSequence(0).spawn(20)
    for i, (k, d) in enumerate([(3, 2)] * 5 + [(3, 10)] * 5 + [(4, 2)] * 5 + [(4, 10)] * 5):
        if d != 2:
            continue
        rng = np.random.default_rng(seeds[i])
        T = random_symmetric(d, k, rng)
        dec = approx_rank1_decompose(T, 1e-10, rng=rng)
        R = T.copy()
        for j, (s, v) in enumerate(dec.terms):
            lam, _ = sphere_maxabs(R, grid_resolution=360, n_refine=2)
            if abs(dec.eigenvalues[j]) >= lam * (1 - 1e-8):
                confirmed += 1
                violations += dec.ratios()[j] > rate_bound(k, d)
            R = R - s * tensor_power(v, k)
    ok = (len(tensors) == 20 and decreasing and reached and within and violations == 0
          and elapsed < 60)
    report("C3 rank-1 decay", ok,
           f"{len(tensors)} tensors, {len(rows)} terms, max ratio/bound="
           f"{max(r['ratio'] / r['rate_bound'] for r in rows):.6f}, "
           f"oracle-confirmed d=2 terms={confirmed} (violations {violations}), {elapsed:.1f}s")
    assert ok


def test_c4_entry_bound(report):
    rng = np.random.default_rng(4)
    worst = {}
    violations = 0
    for k in (3, 4):
        c = BOUNDS.for_order(k)
        worst[k] = np.inf
        for _ in range(200):
            T = random_symmetric(2, k, rng)
            lam, emax, ratio = verify_entry_bound(T)
            violations += lam < c * emax
            worst[k] = min(worst[k], ratio / c)
    ok = violations == 0
    report("C4 entry-eigenvalue inequality", ok,
           f"violations={violations}, min margin lambda/(c max|T|): "
           f"k=3 {worst[3]:.3f}, k=4 {worst[4]:.3f}")
    assert ok


def test_c5_sut_baseline(report):
    rng = np.random.default_rng(5)
    worst = 0.0
    for i in range(100):
        d = 1 + i % 5
        A = rng.standard_normal((d, d))
        C = A @ A.T + 0.1 * np.eye(d)
        mu = rng.standard_normal(d)
        ens = sut(mu, C, float(rng.uniform(0.5, 3.0)))
        got = ens.moments()
        worst = max(worst, _rel(got.mean, mu), _rel(got.cov, C))
    ens = sut(np.zeros(1), np.eye(1), sqrt(3.0))
    fourth = float(ens.expect(ens.nodes[:, 0] ** 4))
    ok = worst <= 1e-10 and abs(fourth - 3.0) <= 1e-12
    report("C5 SUT baseline", ok, f"worst rel (mu, C) error={worst:.2e}, E[x^4]={fourth!r}")
    assert ok


def test_c6_lorenz_skill(report):
    t0 = time.perf_counter()
    rep = forecast_study(LorenzSpec())
    elapsed = time.perf_counter() - t0
    h, s = rep.hout[1:5, 0], rep.sut[1:5, 0]
    ok = bool(np.all(h < s)) and elapsed < 600
    report("C6 Lorenz-63 skill", ok,
           "steps 1-4 mean error HOUT/SUT: "
           + ", ".join(f"{a:.2e}/{b:.2e}" for a, b in zip(h, s))
           + f"; trials used {rep.trials_used}, skipped {rep.trials_skipped}, {elapsed:.0f}s")
    assert ok


def test_c7_property_suites(report):
    # The property suites live in the module test files and run with at least
    # 100 hypothesis examples each (profile in conftest).  Here we only confirm
    # the profile is active.
    from hypothesis import settings
    n = settings().max_examples
    ok = n >= 100
    report("C7 property suites", ok, f"hypothesis max_examples={n}; see test_tensor, "
           "test_decomp, test_sigma, test_experiments")
    assert ok

"""Desk-scale numerical studies against a Monte Carlo ground truth.

* rank-1 decay: residual curves of the greedy decomposition on random tensors;
* polynomial study: SUT and four-moment sigma points on ``f(x) = a.x + c b.x^n``
  applied to a heavy-tailed two-dimensional input;
* forecast study: Lorenz-63 ensemble forecasts, large-ensemble truth against
  the two sigma-point ensembles.

Every study is a pure function of its spec and seed.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from math import sqrt

import numpy as np

from .decomp import approx_rank1_decompose, rate_bound
from .errors import EvaluationError, HoutError
from .sigma import empirical_moments, hout_ensemble, sut, weighted_moments
from .tensor import frobenius_norm, random_symmetric

GEOMEAN_FLOOR = 1e-16
SUT_BETA = sqrt(3.0)


def _spec_from_dict(cls, obj):
    names = {f.name for f in fields(cls)}
    unknown = set(obj) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**obj)


# --- rank-1 decay -----------------------------------------------------------

def decay_study(orders=(3, 4), dims=(2, 10), count=5, tau=1e-10, seed=0):
    """Decompose ``count`` random symmetric tensors per ``(k, d)``.

    Returns one row per accepted term: residual before and after, their ratio,
    and the guaranteed rate.
    """
    rows = []
    seeds = np.random.SeedSequence(seed).spawn(len(orders) * len(dims) * count)
    i = 0
    for k in orders:
        for d in dims:
            for t in range(count):
                rng = np.random.default_rng(seeds[i])
                i += 1
                T = random_symmetric(d, k, rng)
                dec = approx_rank1_decompose(T, tau, rng=rng)
                r = dec.residual_norms
                for j in range(len(dec)):
                    rows.append({"order": k, "dim": d, "tensor": t, "term": j + 1,
                                 "residual_before": r[j], "residual_after": r[j + 1],
                                 "ratio": r[j + 1] / r[j], "rate_bound": rate_bound(k, d)})
    return rows


# --- non-Gaussian polynomial study ------------------------------------------

@dataclass
class NonGaussianSpec:
    """``X = A Z + B (sign(Z) Z^2)`` with ``Z`` standard normal.

    ``A`` and ``B`` default to i.i.d. standard normal matrices drawn from ``seed``.
    """

    d: int = 2
    ensemble_size: int = 20000
    seed: int = 0
    A: np.ndarray = None
    B: np.ndarray = None

    def __post_init__(self):
        mat_seed, _ = np.random.SeedSequence(self.seed).spawn(2)
        rng = np.random.default_rng(mat_seed)
        A = rng.standard_normal((self.d, self.d))
        B = rng.standard_normal((self.d, self.d))
        self.A = A if self.A is None else np.asarray(self.A, dtype=float).reshape(self.d, self.d)
        self.B = B if self.B is None else np.asarray(self.B, dtype=float).reshape(self.d, self.d)
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.B))):
            raise ValueError("A and B must be finite")
        if self.ensemble_size < 10:
            raise ValueError("ensemble_size must be at least 10")

    @classmethod
    def from_dict(cls, obj):
        return _spec_from_dict(cls, obj)


def sample_nongaussian(spec):
    """``(ensemble_size, d)`` samples of ``A z + B (sign(z) z^2)``."""
    _, z_seed = np.random.SeedSequence(spec.seed).spawn(2)
    Z = np.random.default_rng(z_seed).standard_normal((spec.ensemble_size, spec.d))
    return Z @ spec.A.T + (np.sign(Z) * Z * Z) @ spec.B.T


@dataclass
class PolySpec:
    """``f(x) = a.x + c b.(x^n)`` with the power taken componentwise."""

    a: np.ndarray
    b: np.ndarray
    n: int
    c_values: tuple = (0.0, 0.1, 0.3, 1.0, 3.0)

    def __post_init__(self):
        self.a = np.atleast_1d(np.asarray(self.a, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        self.c_values = tuple(float(c) for c in self.c_values)
        if self.n not in (2, 3, 4, 5):
            raise ValueError(f"n must be in 2..5, got {self.n}")
        if self.a.shape != self.b.shape:
            raise ValueError("a and b must have the same length")


def random_polys(d=2, powers=(2, 3, 4, 5), c_values=PolySpec.c_values, seed=0):
    """One :class:`PolySpec` per power with standard normal ``a`` and ``b``."""
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[2])
    return [PolySpec(rng.standard_normal(d), rng.standard_normal(d), n, c_values)
            for n in powers]


def poly_f(spec, c):
    """Vectorized ``f``: accepts one point or an ``(N, d)`` array of points."""
    a, b, n = spec.a, spec.b, spec.n

    def f(x):
        x = np.asarray(x, dtype=float)
        return x @ a + c * ((x ** n) @ b)
    return f


@dataclass
class OracleStats:
    mean: np.ndarray
    variance: np.ndarray
    mean_se: np.ndarray
    variance_se: np.ndarray
    moments: object


def mc_oracle(ensemble, f):
    """Uniform-weight statistics of ``f`` over a sample, with standard errors."""
    X = np.asarray(ensemble, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    N = X.shape[0]
    if N == 0:
        raise ValueError("empty ensemble")
    Y = np.asarray(f(X), dtype=float).reshape(N, -1)
    bad = np.flatnonzero(~np.all(np.isfinite(Y), axis=1))
    if bad.size:
        raise EvaluationError(f"non-finite output at sample {int(bad[0])}", operation="mc_oracle")
    m = weighted_moments(Y, np.full(N, 1.0 / N))
    var = np.diag(m.cov).copy()
    m4 = np.einsum("iiii->i", m.kurt)
    return OracleStats(mean=m.mean, variance=var, mean_se=np.sqrt(var / N),
                       variance_se=np.sqrt(np.maximum(m4 - var ** 2, 0.0) / N), moments=m)


POLY_COLUMNS = ("n", "c", "method", "param", "mean_est", "mean_true", "mean_err",
                "mean_se", "var_est", "var_true", "var_err", "var_se")


def polynomial_study(ng_spec, polys, tau=1e-5, betas=(0.5, 1.0, SUT_BETA, 2.0),
                     gammas=(None, 0.5, 1.0, 2.0)):
    """Absolute mean and variance errors of both transforms for every ``(n, c)``.

    The input moments are the empirical moments of the sample, so the oracle
    and the quadratures see the same distribution; what remains is quadrature
    error plus the oracle's own Monte Carlo noise (reported as ``*_se``).
    ``gamma=None`` selects the default spread.
    """
    X = sample_nongaussian(ng_spec)
    m = empirical_moments(X)
    ensembles = [("SUT", b, sut(m.mean, m.cov, b)) for b in betas]
    for g in gammas:
        ens, p = hout_ensemble(m, tau, g)
        ensembles.append(("HOUT", p.gamma, ens))
    rows = []
    for poly in polys:
        for c in poly.c_values:
            f = poly_f(poly, c)
            truth = mc_oracle(X, f)
            for method, param, ens in ensembles:
                Y = f(ens.nodes)
                mean = float(ens.expect(Y))
                var = float(ens.expect((Y - mean) ** 2))
                mt, vt = float(truth.mean[0]), float(truth.variance[0])
                rows.append({"n": poly.n, "c": c, "method": method, "param": float(param),
                             "mean_est": mean, "mean_true": mt, "mean_err": abs(mean - mt),
                             "mean_se": float(truth.mean_se[0]),
                             "var_est": var, "var_true": vt, "var_err": abs(var - vt),
                             "var_se": float(truth.variance_se[0])})
    return rows


# --- Lorenz-63 forecast study -----------------------------------------------

def lorenz_rhs(X, sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    x, y, z = X[..., 0], X[..., 1], X[..., 2]
    return np.stack([sigma * (y - x), x * (rho - z) - y, x * y - beta * z], axis=-1)


def lorenz_rk4_step(state, dt, sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    """One classical RK4 step; ``state`` may be ``(3,)`` or ``(N, 3)``."""
    X = np.asarray(state, dtype=float)
    k1 = lorenz_rhs(X, sigma, rho, beta)
    k2 = lorenz_rhs(X + 0.5 * dt * k1, sigma, rho, beta)
    k3 = lorenz_rhs(X + 0.5 * dt * k2, sigma, rho, beta)
    k4 = lorenz_rhs(X + dt * k3, sigma, rho, beta)
    return X + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass
class LorenzSpec:
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    dt: float = 0.1
    spinup_steps: int = 5
    forecast_steps: int = 15
    trials: int = 50
    noise_scale: float = 0.1
    ensemble_size: int = 20000
    seed: int = 0
    tau: float = 1e-5
    sut_beta: float = SUT_BETA
    halve_delta: bool = True
    attractor_steps: int = 1000
    max_offset: int = 5000

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.ensemble_size < 10:
            raise ValueError("ensemble_size must be at least 10")
        if self.forecast_steps < 0 or self.spinup_steps < 0:
            raise ValueError("step counts must be nonnegative")

    @classmethod
    def from_dict(cls, obj):
        return _spec_from_dict(cls, obj)

    def step(self, X):
        return lorenz_rk4_step(X, self.dt, self.sigma, self.rho, self.beta)


MOMENT_NAMES = ("mean", "cov", "skew", "kurt")


@dataclass
class SkillReport:
    """Geometric-mean Frobenius errors; arrays are ``(forecast_steps + 1, 4)``,
    row ``s`` is lead time ``s * dt`` and columns follow ``MOMENT_NAMES``."""

    dt: float
    hout: np.ndarray
    sut: np.ndarray
    trials_used: int
    trials_skipped: int
    per_trial: dict = field(default_factory=dict, repr=False)

    def rows(self):
        out = []
        for s in range(self.hout.shape[0]):
            row = {"step": s, "time": s * self.dt}
            for j, name in enumerate(MOMENT_NAMES):
                row[f"hout_{name}"] = float(self.hout[s, j])
            for j, name in enumerate(MOMENT_NAMES):
                row[f"sut_{name}"] = float(self.sut[s, j])
            out.append(row)
        return out


SKILL_COLUMNS = (("step", "time") + tuple(f"hout_{n}" for n in MOMENT_NAMES)
                 + tuple(f"sut_{n}" for n in MOMENT_NAMES))


def attractor_trajectory(spec):
    """States after ``attractor_steps + j`` steps from ``(1, 1, 1)``, ``j = 0..max_offset``."""
    x = np.ones(3)
    for _ in range(spec.attractor_steps):
        x = spec.step(x)
    traj = np.empty((spec.max_offset + 1, 3))
    traj[0] = x
    for j in range(1, spec.max_offset + 1):
        traj[j] = spec.step(traj[j - 1])
    return traj


def _moment_errors(est, truth):
    return [float(np.linalg.norm(est.mean - truth.mean)),
            frobenius_norm(est.cov - truth.cov),
            frobenius_norm(est.skew - truth.skew),
            frobenius_norm(est.kurt - truth.kurt)]


def forecast_trial(spec, traj, seed):
    """Errors ``(hout, sut)`` of one trial, each ``(forecast_steps + 1, 4)``."""
    rng = np.random.default_rng(seed)
    start = traj[rng.integers(1, spec.max_offset + 1)]
    X = start + spec.noise_scale * rng.standard_normal((spec.ensemble_size, 3))
    for _ in range(spec.spinup_steps):
        X = spec.step(X)
    m0 = empirical_moments(X)
    h_ens, _ = hout_ensemble(m0, spec.tau, rng=rng, halve_delta=spec.halve_delta)
    s_ens = sut(m0.mean, m0.cov, spec.sut_beta)
    H, S = h_ens.nodes, s_ens.nodes
    err_h, err_s = [], []
    for s in range(spec.forecast_steps + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            if s > 0:
                X, H, S = spec.step(X), spec.step(H), spec.step(S)
            truth = empirical_moments(X)
            eh = _moment_errors(weighted_moments(H, h_ens.weights), truth)
            es = _moment_errors(weighted_moments(S, s_ens.weights), truth)
        if not np.all(np.isfinite(eh + es)):
            raise EvaluationError(f"sigma points diverged at forecast step {s}",
                                  operation="forecast_study")
        err_h.append(eh)
        err_s.append(es)
    return np.array(err_h), np.array(err_s)


def geometric_mean(errors, axis=0):
    return np.exp(np.mean(np.log(np.asarray(errors) + GEOMEAN_FLOOR), axis=axis))


def _thread_count(threads):
    if threads is None:
        threads = int(os.environ.get("HOUT_THREADS", "1"))
    return max(1, threads)


def forecast_study(spec, threads=None):
    """Run ``spec.trials`` independent forecasts and average their errors geometrically.

    Trials that fail (decomposition or non-finite sigma points) are skipped and
    counted.  Results do not depend on ``threads`` (``HOUT_THREADS`` by default).
    """
    traj = attractor_trajectory(spec)
    seeds = np.random.SeedSequence(spec.seed).spawn(spec.trials)

    def run(seed):
        try:
            return forecast_trial(spec, traj, seed)
        except HoutError:
            return None

    n = _thread_count(threads)
    if n == 1:
        results = [run(s) for s in seeds]
    else:
        with ThreadPoolExecutor(n) as pool:
            results = list(pool.map(run, seeds))
    ok = [r for r in results if r is not None]
    if not ok:
        raise EvaluationError("every forecast trial failed", operation="forecast_study")
    eh = np.array([r[0] for r in ok])
    es = np.array([r[1] for r in ok])
    return SkillReport(dt=spec.dt, hout=geometric_mean(eh), sut=geometric_mean(es),
                       trials_used=len(ok), trials_skipped=len(results) - len(ok),
                       per_trial={"hout": eh, "sut": es})

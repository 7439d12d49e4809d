"""Sigma-point quadrature: the scaled unscented transform and its four-moment extension.

Both generators return a :class:`SigmaEnsemble` of signed weights and nodes
whose weighted central moments reproduce a prescribed :class:`MomentSet`.
The SUT matches mean and covariance exactly.  The higher order transform
additionally matches skewness and kurtosis to an absolute Frobenius
tolerance ``tau``, by placing node pairs along the vectors of approximate
rank-1 decompositions of the two higher moment tensors.

Numerics.  The four-moment rule has condition number ``sum |w_i|`` of order
``d |C|^2 / tau``, so weights of 1e6 and more are normal.  Three measures keep
identities that hold in exact arithmetic intact in floating point:

* all weights are integer multiples of one power of two, chosen so that every
  partial sum is representable; the weights then sum to exactly one in any
  order;
* the two nodes of each ``mu +- o`` pair have offsets from ``mu`` that are
  exact negatives of each other;
* quadratures are evaluated as ``f(center) + sum_i w_i (f(sigma_i) - f(center))``,
  the same rule rearranged so the large weights multiply small differences.
"""

from dataclasses import dataclass, field
from math import ceil, floor, frexp, ldexp, sqrt

import numpy as np

from .decomp import EIG_TOL, MAX_ITERS, approx_rank1_decompose
from .errors import EvaluationError, NotPositiveDefiniteError, ParameterError
from .tensor import frobenius_norm, is_symmetric, symmetrize, tensor_power

DELTA_MARGIN = 1e-6
BETA_FRAC = 0.99
ALPHA_FRAC = 0.99
ALPHA_DEGENERATE = 1.0
MAX_HALVINGS = 64


def pd_tol(C):
    C = np.atleast_2d(C)
    return 1e-10 * np.trace(C) / C.shape[0]


@dataclass
class MomentSet:
    """Mean, covariance, skewness and kurtosis tensors of one distribution."""

    mean: np.ndarray
    cov: np.ndarray
    skew: np.ndarray
    kurt: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        d = self.mean.size
        self.cov = np.asarray(self.cov, dtype=float).reshape((d,) * 2)
        self.skew = np.asarray(self.skew, dtype=float).reshape((d,) * 3)
        self.kurt = np.asarray(self.kurt, dtype=float).reshape((d,) * 4)

    @property
    def dim(self):
        return self.mean.size

    def validate(self):
        """Raise unless covariance is positive definite and the tensors are symmetric."""
        lam_min = np.linalg.eigvalsh(self.cov)[0]
        if not lam_min > pd_tol(self.cov):
            raise NotPositiveDefiniteError(
                f"covariance is not positive definite (min eigenvalue {lam_min:.3e})",
                operation="validate_moments")
        for name, T in (("skewness", self.skew), ("kurtosis", self.kurt)):
            if not is_symmetric(T):
                raise ParameterError(f"{name} tensor is not symmetric",
                                     operation="validate_moments")
        if np.any(np.einsum("iiii->i", self.kurt) < 0):
            raise ParameterError("kurtosis diagonal must be nonnegative",
                                 operation="validate_moments")
        return self

    def errors(self, other):
        """Frobenius distances ``(mean, cov, skew, kurt)`` to another moment set."""
        return (float(np.linalg.norm(self.mean - other.mean)),
                frobenius_norm(self.cov - other.cov),
                frobenius_norm(self.skew - other.skew),
                frobenius_norm(self.kurt - other.kurt))

    def to_json(self):
        return {"mu": self.mean.tolist(), "C": self.cov.ravel().tolist(),
                "S": self.skew.ravel().tolist(), "K": self.kurt.ravel().tolist()}

    @classmethod
    def from_json(cls, obj):
        mu = np.atleast_1d(np.asarray(obj["mu"], dtype=float))
        d = mu.size
        return cls(mu,
                   symmetrize(np.reshape(obj["C"], (d,) * 2)),
                   symmetrize(np.reshape(obj["S"], (d,) * 3)),
                   symmetrize(np.reshape(obj["K"], (d,) * 4)))


def weighted_moments(points, weights, mean=None):
    """Weighted mean and central moment tensors of order 2-4.

    Weights may be negative (quadrature rules); nothing is clamped.  The mean
    is accumulated relative to the first row.  When ``mean`` is given, central
    moments are taken about it instead of the weighted mean.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    w = np.asarray(weights, dtype=float)
    if mean is None:
        mu = X[0] + w @ (X - X[0])
    else:
        mu = np.atleast_1d(np.asarray(mean, dtype=float))
    Y = X - mu
    C = np.einsum("n,ni,nj->ij", w, Y, Y)
    S = np.einsum("n,ni,nj,nk->ijk", w, Y, Y, Y)
    K = np.einsum("n,ni,nj,nk,nl->ijkl", w, Y, Y, Y, Y)
    return MomentSet(mu, symmetrize(C), symmetrize(S), symmetrize(K))


def empirical_moments(samples, weights=None):
    """Population (divide-by-N) moments of a sample, optionally weighted."""
    X = np.asarray(samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise ValueError("empty sample")
    if X.shape[0] < 2:
        raise ValueError("need at least two samples")
    if not np.all(np.isfinite(X)):
        raise ValueError("samples contain non-finite values")
    if weights is None:
        w = np.full(X.shape[0], 1.0 / X.shape[0])
    else:
        w = np.asarray(weights, dtype=float)
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to one")
    return weighted_moments(X, w)


def sqrt_spd(A):
    """Symmetric positive definite square root; column ``i`` is ``sqrt(A)_i``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    lam, Q = np.linalg.eigh(0.5 * (A + A.T))
    if not lam[0] > pd_tol(A):
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite (min eigenvalue {lam[0]:.3e})")
    return (Q * np.sqrt(lam)) @ Q.T


@dataclass
class SigmaEnsemble:
    """Signed quadrature weights and nodes; row 0 is the centre node ``mu``."""

    nodes: np.ndarray
    weights: np.ndarray
    kind: str
    params: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.nodes.shape[1]

    def moments(self, mean=None):
        return weighted_moments(self.nodes, self.weights, mean)

    def condition(self):
        return float(np.sum(np.abs(self.weights)))

    def expect(self, values):
        """Quadrature ``sum_i w_i values_i`` along the first axis."""
        V = np.asarray(values, dtype=float)
        return V[0] + np.tensordot(self.weights, V - V[0], axes=1)


def _pair_nodes(mu, offsets):
    """Rows ``mu + o`` and ``mu - o`` whose offsets from ``mu`` are exact negatives.

    ``fl(mu + o) - mu`` generally differs from ``o`` by an ulp of ``mu``; with
    large weights that asymmetry shows up directly in the quadrature mean.
    """
    o = np.asarray(offsets, dtype=float)
    for _ in range(8):
        plus = (mu + o) - mu
        minus = mu - (mu - plus)
        if np.array_equal(plus, minus):
            o = plus
            break
        o = minus
    return mu + o, mu - o


def _weight_grid(total):
    """Power of two ``q`` such that sums of multiples of ``q`` bounded by
    ``2 * total`` in magnitude are exact in double precision."""
    return ldexp(1.0, frexp(2.0 * total)[1] - 53)


def _on_grid(x, q, up):
    r = ceil if up else floor
    return r(x / q) * q


def sut(mean, cov, beta):
    """Scaled unscented transform: ``2d + 1`` nodes ``mu, mu +- beta sqrt(C)_i``."""
    mu = np.atleast_1d(np.asarray(mean, dtype=float))
    d = mu.size
    if not beta > 0:
        raise ParameterError("beta must be positive", operation="sut")
    R = sqrt_spd(np.reshape(cov, (d, d)))
    plus, minus = _pair_nodes(mu, beta * R.T)
    nodes = np.vstack([mu, plus, minus])
    weights = np.concatenate([[1.0 - d / beta ** 2], np.full(2 * d, 0.5 / beta ** 2)])
    return SigmaEnsemble(nodes, weights, "SUT", {"beta": float(beta)})


def sut_condition(beta, d):
    """``sum |w_i|`` of the SUT."""
    return 1.0 if beta >= sqrt(d) else 2.0 * d / beta ** 2 - 1.0


@dataclass
class HoutParams:
    """Free parameters and derived quantities of the four-moment rule.

    The ``*_weight`` fields are the exact (dyadic) node weights; ``alpha``,
    ``beta``, ``gamma`` and ``delta`` are the spreads consistent with them.
    """

    tau: float
    alpha: float
    beta: float
    gamma: float
    delta: float
    alpha_weight: float           # 1 / (2 alpha)
    beta_weight: float            # 1 / (2 beta^2)
    gamma_weight: float           # 1 / (2 gamma^3)
    delta_weight: float           # 1 / (2 delta^4)
    skew_vectors: np.ndarray      # J x d
    kurt_signs: np.ndarray        # L
    kurt_vectors: np.ndarray      # L x d
    mu_tilde: np.ndarray
    mu_hat: np.ndarray
    C_tilde: np.ndarray
    C_hat: np.ndarray
    C_bar: np.ndarray
    sqrt_C_hat: np.ndarray
    skew_residual: float = 0.0
    kurt_residual: float = 0.0

    @property
    def J(self):
        return len(self.skew_vectors)

    @property
    def L(self):
        return len(self.kurt_signs)

    @property
    def L_hat(self):
        return float(np.sum(self.kurt_signs))

    @property
    def dim(self):
        return self.mu_hat.size

    @property
    def center_weight(self):
        return 1.0 - 2 * self.dim * self.beta_weight - 2 * self.L_hat * self.delta_weight

    def skew_error_bound(self):
        """A priori bound on the third-moment error."""
        return self.skew_residual + self.alpha ** 2 * frobenius_norm(tensor_power(self.mu_hat, 3))

    def kurt_error_bound(self):
        """A priori bound on the fourth-moment error."""
        return self.kurt_residual + self.beta ** 2 * frobenius_norm(self.C_bar)

    def summary(self):
        return {"tau": self.tau, "alpha": self.alpha, "beta": self.beta,
                "gamma": self.gamma, "delta": self.delta, "J": self.J, "L": self.L,
                "L_hat": self.L_hat}


def _is_pd(A, tol):
    return np.linalg.eigvalsh(A)[0] > tol


def hout_params(moments, tau, gamma=None, *, halve_delta=False,
                delta_margin=DELTA_MARGIN, beta_frac=BETA_FRAC, alpha_frac=ALPHA_FRAC,
                eig_tol=EIG_TOL, max_iters=MAX_ITERS, max_terms=None, rng=None):
    """Choose the free parameters of the four-moment sigma points for ``tau``.

    Skewness and kurtosis are decomposed to ``tau / 2`` each; ``delta`` keeps
    ``C - C_tilde / delta^2`` positive definite; ``beta`` and ``alpha`` are
    taken at ``beta_frac``/``alpha_frac`` of the largest values that keep the
    third and fourth moment errors below ``tau``.
    """
    if not tau > 0:
        raise ParameterError("tau must be positive")
    m = moments.validate()
    d = m.dim
    C = m.cov

    def decompose(T):
        if frobenius_norm(T) <= tau / 2:
            return [], [], frobenius_norm(T)
        dec = approx_rank1_decompose(T, tau / 2, eig_tol, max_iters, max_terms, rng)
        return dec.signs, dec.vectors, dec.residual_norms[-1]

    _, skew_vecs, skew_res = decompose(m.skew)
    kurt_signs, kurt_vecs, kurt_res = decompose(m.kurt)
    V = np.asarray(skew_vecs, dtype=float).reshape(-1, d)
    U = np.asarray(kurt_vecs, dtype=float).reshape(-1, d)
    s = np.asarray(kurt_signs, dtype=float)

    C_tilde = np.einsum("l,li,lj->ij", s, U, U)
    lam_max = np.linalg.eigvalsh(C_tilde)[-1] if len(s) else 0.0
    lam_min = np.linalg.eigvalsh(C)[0]
    tol = pd_tol(C)
    if lam_max > 0:
        delta = sqrt(lam_max / lam_min) * (1.0 + delta_margin)
    else:
        # C_tilde negative semidefinite: any delta keeps C_hat positive definite
        delta = 1.0
    if not _is_pd(C - C_tilde / delta ** 2, tol):
        raise ParameterError(f"C_hat not positive definite at delta={delta:.6g}")
    if halve_delta:
        for _ in range(MAX_HALVINGS):
            if not _is_pd(C - C_tilde / (delta / 2) ** 2, tol):
                break
            delta /= 2

    def beta_for(delta):
        C_hat = C - C_tilde / delta ** 2
        R = sqrt_spd(C_hat)
        C_bar = sum(tensor_power(R[:, i], 4) for i in range(d))
        return beta_frac * sqrt(tau / (2.0 * frobenius_norm(C_bar))), C_hat, R, C_bar

    J = len(V)
    if gamma is None:
        gamma = J ** (-1.0 / 3.0) if J > 0 else 1.0
    if not gamma > 0:
        raise ParameterError("gamma must be positive")
    mu_tilde = V.sum(axis=0) if J else np.zeros(d)

    def alpha_for(gamma):
        # the skew pairs shift the mean by mu_tilde / gamma^2; the alpha pair cancels it
        mu_hat = -mu_tilde / gamma ** 2
        cube = frobenius_norm(tensor_power(mu_hat, 3))
        alpha = alpha_frac * sqrt(tau / (2.0 * cube)) if cube > 0 else ALPHA_DEGENERATE
        return alpha, mu_hat

    # first pass sizes the weight grid, second pass puts every weight on it
    beta = beta_for(delta)[0]
    alpha = alpha_for(gamma)[0]
    L_hat = float(np.sum(s))
    total = (1.0 + 2 * d * 0.5 / beta ** 2 + 2 * abs(L_hat) * 0.5 / delta ** 4
             + 2 * 0.5 / alpha + 2 * J * 0.5 / gamma ** 3 + 2 * len(s) * 0.5 / delta ** 4)
    q = _weight_grid(total)

    # rounding down only moves delta further above its bound
    delta_weight = _on_grid(0.5 / delta ** 4, q, up=False)
    if delta_weight == 0.0:
        delta_weight = 0.5 / delta ** 4
    delta = (0.5 / delta_weight) ** 0.25
    beta, C_hat, R, C_bar = beta_for(delta)
    # rounding up shrinks beta, alpha and gamma, which only tightens the error bounds
    beta_weight = _on_grid(0.5 / beta ** 2, q, up=True)
    beta = sqrt(0.5 / beta_weight)
    gamma_weight = _on_grid(0.5 / gamma ** 3, q, up=True)
    gamma = (0.5 / gamma_weight) ** (1.0 / 3.0)
    alpha, mu_hat = alpha_for(gamma)
    alpha_weight = _on_grid(0.5 / alpha, q, up=True)
    alpha = 0.5 / alpha_weight

    return HoutParams(tau=float(tau), alpha=alpha, beta=beta, gamma=gamma, delta=delta,
                      alpha_weight=alpha_weight, beta_weight=beta_weight,
                      gamma_weight=gamma_weight, delta_weight=delta_weight,
                      skew_vectors=V, kurt_signs=s, kurt_vectors=U,
                      mu_tilde=mu_tilde, mu_hat=mu_hat, C_tilde=C_tilde,
                      C_hat=C_hat, C_bar=C_bar, sqrt_C_hat=R,
                      skew_residual=float(skew_res), kurt_residual=float(kurt_res))


def hout(moments, params):
    """The ``2(d + J + L) + 3`` four-moment sigma points.

    Node order: ``mu``, ``mu +- alpha mu_hat``, ``mu +- beta sqrt(C_hat)_i``,
    ``mu +- gamma v_i`` (skewness vectors), ``mu +- delta u_i`` (kurtosis
    vectors); within each group all plus nodes precede all minus nodes.
    """
    p = params
    mu = np.atleast_1d(np.asarray(moments.mean, dtype=float))
    d, J, L = mu.size, p.J, p.L
    offsets = np.vstack([(p.alpha * p.mu_hat)[None, :],
                         p.beta * p.sqrt_C_hat.T,
                         p.gamma * p.skew_vectors,
                         p.delta * p.kurt_vectors])
    plus, minus = _pair_nodes(mu, offsets)
    cuts = np.cumsum([1, d, J])
    groups = zip(np.split(plus, cuts), np.split(minus, cuts))
    nodes = np.vstack([mu[None, :]] + [g for pair in groups for g in pair])
    weights = np.concatenate([
        [p.center_weight, p.alpha_weight, -p.alpha_weight],
        np.full(2 * d, p.beta_weight),
        np.full(J, p.gamma_weight),
        np.full(J, -p.gamma_weight),
        p.kurt_signs * p.delta_weight,
        p.kurt_signs * p.delta_weight,
    ])
    if len(weights) != 2 * (d + J + L) + 3 or len(nodes) != len(weights):
        raise ParameterError("node/weight count mismatch", operation="hout")
    return SigmaEnsemble(nodes, weights, "HOUT", p.summary())


def hout_ensemble(moments, tau, gamma=None, **kwargs):
    """:func:`hout_params` followed by :func:`hout`; returns ``(ensemble, params)``."""
    params = hout_params(moments, tau, gamma, **kwargs)
    return hout(moments, params), params


def hout_condition(params):
    """``sum |w_i|`` of the four-moment rule.

    When ``mu_hat = 0`` the ``mu +- alpha mu_hat`` pair sits on the centre node
    with cancelling weights, so it is left out; with no skewness or kurtosis
    terms the value then equals :func:`sut_condition`.
    """
    p = params
    alpha_term = 2 * p.alpha_weight if np.any(p.mu_hat) else 0.0
    return (abs(p.center_weight) + alpha_term + 2 * p.dim * p.beta_weight
            + 2 * p.J * p.gamma_weight + 2 * p.L * p.delta_weight)


def propagate(ensemble, f, vectorized=False):
    """Push every node through ``f`` and summarize the weighted outputs.

    Returns ``(outputs, MomentSet)`` with one output row per node.  With
    ``vectorized=True`` ``f`` receives the whole ``(n, d)`` node array.
    """
    if vectorized:
        Y = np.asarray(f(ensemble.nodes), dtype=float).reshape(len(ensemble), -1)
    else:
        Y = np.vstack([np.atleast_1d(np.asarray(f(x), dtype=float)) for x in ensemble.nodes])
    bad = np.flatnonzero(~np.all(np.isfinite(Y), axis=1))
    if bad.size:
        raise EvaluationError(f"non-finite output at node index {int(bad[0])}")
    return Y, weighted_moments(Y, ensemble.weights)

"""Tensor eigenpairs and the approximate rank-1 decomposition.

The decomposition greedily subtracts the best rank-1 approximation
``lambda * v^{(x)k}`` (found with the higher order power method) until the
Frobenius norm of the residual drops below a tolerance.  For symmetric tensors
of order 3 and 4 each step shrinks the residual by at least
``rate_bound(k, d)``.
"""

from dataclasses import dataclass, field
from math import sqrt

import numpy as np
from scipy.optimize import minimize

from .errors import BudgetExceededError, DegenerateInputError, StallError
from .tensor import (check_tensor, frobenius_norm, multi_contract, tensor_power,
                     unfold)

EIG_TOL = 1e-12
MAX_ITERS = 500
N_RESTARTS = 8
STALL_RATIO = 1.0 - 1e-14
STALL_STEPS = 3


@dataclass(frozen=True)
class BoundConstants:
    """Lower bounds ``c`` in ``lambda_maxabs >= c * max|T_i...|``."""

    c3: float = 2.0 / (3.0 + 4.0 * sqrt(2.0) + sqrt(3.0))
    c4: float = 6.0 / 323.0

    def for_order(self, k):
        return {2: 1.0, 3: self.c3, 4: self.c4}[k]


BOUNDS = BoundConstants()


@dataclass
class EigenPair:
    vector: np.ndarray
    eigenvalue: float
    converged: bool = True
    iterations: int = 0
    residual: float = 0.0


@dataclass
class Rank1Decomposition:
    order: int
    signs: list = field(default_factory=list)
    vectors: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)
    rate_bound: float = 1.0
    eigenvalues: list = field(default_factory=list)

    @property
    def terms(self):
        return list(zip(self.signs, self.vectors))

    def __len__(self):
        return len(self.signs)

    def reconstruct(self, dim=None):
        if dim is None:
            dim = len(self.vectors[0])
        T = np.zeros((dim,) * self.order)
        for s, v in zip(self.signs, self.vectors):
            T += s * tensor_power(v, self.order)
        return T

    def ratios(self):
        r = np.asarray(self.residual_norms, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return r[1:] / r[:-1]

    def to_json(self):
        return {
            "order": self.order,
            "signs": [int(s) for s in self.signs],
            "vectors": [np.asarray(v).tolist() for v in self.vectors],
            "residual_norms": [float(x) for x in self.residual_norms],
            "rate_bound": float(self.rate_bound),
        }

    @classmethod
    def from_json(cls, obj):
        return cls(order=int(obj["order"]),
                   signs=[int(s) for s in obj["signs"]],
                   vectors=[np.asarray(v, dtype=float) for v in obj["vectors"]],
                   residual_norms=[float(x) for x in obj["residual_norms"]],
                   rate_bound=float(obj["rate_bound"]))


def rate_bound(k, d):
    """Guaranteed per-step contraction ``sqrt(1 - c_k^2 / d^k)``; ``c = 1`` for matrices."""
    c = BOUNDS.for_order(k)
    return sqrt(1.0 - c * c / d ** k)


def _contract_except(T, vecs, skip):
    """Contract a symmetric tensor with every vector except ``vecs[skip]``.

    Symmetry makes the slot order irrelevant, so the trailing axis is contracted
    each time (cheap ``@`` chains; this is the hot loop of the decomposition).
    """
    d = T.shape[0]
    out = T.reshape(-1)
    for m in range(len(vecs) - 1, -1, -1):
        if m != skip:
            out = out.reshape(-1, d) @ vecs[m]
    return out


def _form(T, v):
    d = T.shape[0]
    out = T.reshape(-1)
    for _ in range(T.ndim):
        out = out.reshape(-1, d) @ v
    return float(out[0])


def _eig_residual(T, v, lam):
    return float(np.linalg.norm(multi_contract(T, v, T.ndim - 1) - lam * v))


def _newton_polish(T, v, lam, tol, scale, steps=20):
    """Newton iterations on ``T v^{k-1} = lam v, |v| = 1``."""
    k, d = T.ndim, T.shape[0]
    best = (v, lam, _eig_residual(T, v, lam))
    for _ in range(steps):
        if best[2] <= tol * min(scale, max(1.0, abs(best[1]))):
            break
        v, lam = best[0], best[1]
        g = multi_contract(T, v, k - 1)
        H = T
        for _ in range(k - 2):
            H = H @ v
        jac = np.zeros((d + 1, d + 1))
        jac[:d, :d] = (k - 1) * H - lam * np.eye(d)
        jac[:d, d] = -v
        jac[d, :d] = -v
        rhs = -np.concatenate([g - lam * v, [0.5 * (1.0 - v @ v)]])
        try:
            step = np.linalg.solve(jac, rhs)
        except np.linalg.LinAlgError:
            break
        v_new = v + step[:d]
        v_new /= np.linalg.norm(v_new)
        lam_new = multi_contract(T, v_new, k)
        res = _eig_residual(T, v_new, lam_new)
        # never trade a larger eigenvalue for a smaller one
        if res >= best[2] or abs(lam_new) < abs(best[1]) * (1 - 1e-8):
            break
        best = (v_new, lam_new, res)
    return best


def leading_left_singular_vector(M):
    """Top eigenvector of the small Gram matrix ``M M^T`` (``M`` is ``d x d^(k-1)``)."""
    _, U = np.linalg.eigh(M @ M.T)
    return U[:, -1]


def _canonical_sign(v, k):
    if k % 2 == 0 and v[np.argmax(np.abs(v))] < 0:
        return -v
    return v


def hopm(T, eig_tol=EIG_TOL, max_iters=MAX_ITERS, init=None):
    """Higher order power method for a symmetric tensor.

    Starts from the leading left singular vector of the unfolding (or ``init``),
    then sweeps the ``k`` factor vectors in turn, each one replaced by the
    normalized contraction of ``T`` with the other ``k - 1``.  Stops when the
    eigenvalue estimate changes by at most ``eig_tol``.
    """
    T = check_tensor(T)
    k = T.ndim
    if frobenius_norm(T) == 0.0:
        raise DegenerateInputError("zero tensor has no eigen-direction")
    if init is None:
        u = leading_left_singular_vector(unfold(T))
    else:
        u = np.asarray(init, dtype=float)
        u = u / np.linalg.norm(u)
    scale = frobenius_norm(T)
    vecs = [u.copy() for _ in range(k)]
    lam, lam_prev = np.inf, 0.0
    it = 0
    # tolerance relative to the tensor scale, capped by the absolute eig_tol * max(1, |lam|)
    while abs(lam - lam_prev) > eig_tol * min(scale, max(1.0, abs(lam))) and it < max_iters:
        for ell in range(k):
            w = _contract_except(T, vecs, ell)
            nw = sqrt(w @ w)
            if nw == 0.0:
                break
            vecs[ell] = w / nw
        lam_prev = lam
        lam = _form(T, vecs[0])
        it += 1
    v = vecs[0]
    lam = multi_contract(T, v, k)
    v, lam, res = _newton_polish(T, v, lam, eig_tol, scale)
    converged = res <= eig_tol * min(scale, max(1.0, abs(lam)))
    v = _canonical_sign(v, k)
    return EigenPair(vector=v, eigenvalue=float(lam), converged=converged,
                     iterations=it, residual=res)


def _dominant_eigenpair(T, eig_tol, max_iters, rng, restarts=N_RESTARTS):
    best = hopm(T, eig_tol, max_iters)
    for _ in range(restarts):
        x = rng.standard_normal(T.shape[0])
        cand = hopm(T, eig_tol, max_iters, init=x)
        if abs(cand.eigenvalue) > abs(best.eigenvalue):
            best = cand
    return best


def scale_eigenpair(pair, k):
    """Convert ``(v, lambda)`` into a sign and a scaled vector with
    ``s * w^{(x)k} == lambda * v^{(x)k}``."""
    lam = pair.eigenvalue
    v = pair.vector
    s = 1 if lam >= 0 else -1
    if k % 2 == 1 and s < 0:
        v, s = -v, 1
    return s, abs(lam) ** (1.0 / k) * v


def best_rank1(T, eig_tol=EIG_TOL, max_iters=MAX_ITERS):
    T = check_tensor(T)
    return scale_eigenpair(hopm(T, eig_tol, max_iters), T.ndim)


def approx_rank1_decompose(T, tau, eig_tol=EIG_TOL, max_iters=MAX_ITERS,
                           max_terms=None, rng=None):
    """Greedy rank-1 decomposition ``T ~ sum_i s_i v_i^{(x)k}`` to Frobenius tolerance ``tau``.

    Raises ``BudgetExceededError`` after ``max_terms`` terms (default ``10 d^k``)
    and ``StallError`` if the residual stops shrinking for several steps even
    after random restarts of the eigen-solver.  Both carry the partial result.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    T = check_tensor(T)
    k, d = T.ndim, T.shape[0]
    if max_terms is None:
        max_terms = 10 * d ** k
    if rng is None:
        rng = np.random.default_rng(0)
    dec = Rank1Decomposition(order=k, rate_bound=rate_bound(k, d))
    R = T.copy()
    norm = frobenius_norm(R)
    dec.residual_norms.append(norm)
    stalls = 0
    while norm > tau:
        if len(dec) >= max_terms:
            raise BudgetExceededError(
                f"residual {norm:.3e} > tau={tau:.3e} after {max_terms} terms", partial=dec)
        pair = hopm(R, eig_tol, max_iters)
        s, v = scale_eigenpair(pair, k)
        R_new = R - s * tensor_power(v, k)
        new_norm = frobenius_norm(R_new)
        if new_norm >= STALL_RATIO * norm:
            pair = _dominant_eigenpair(R, eig_tol, max_iters, rng)
            s, v = scale_eigenpair(pair, k)
            R_new = R - s * tensor_power(v, k)
            new_norm = frobenius_norm(R_new)
        if new_norm >= STALL_RATIO * norm:
            stalls += 1
            if stalls >= STALL_STEPS:
                raise StallError(f"residual stalled at {norm:.3e}", partial=dec)
            if new_norm >= norm:
                continue
        else:
            stalls = 0
        dec.signs.append(s)
        dec.vectors.append(v)
        dec.eigenvalues.append(pair.eigenvalue)
        dec.residual_norms.append(new_norm)
        R, norm = R_new, new_norm
    return dec


def _sphere_points(d, n):
    if d == 1:
        return np.ones((1, 1))
    if d == 2:
        # v and -v give the same |T v^k|, so a half circle suffices
        t = np.linspace(0.0, np.pi, n, endpoint=False)
        return np.column_stack([np.cos(t), np.sin(t)])
    if d == 3:
        th = np.linspace(0.0, np.pi, n)
        ph = np.linspace(0.0, 2 * np.pi, 2 * n, endpoint=False)
        TH, PH = np.meshgrid(th, ph, indexing="ij")
        return np.column_stack([(np.sin(TH) * np.cos(PH)).ravel(),
                                (np.sin(TH) * np.sin(PH)).ravel(),
                                np.cos(TH).ravel()])
    raise ValueError("sphere search is only supported for d <= 3")


def _angles_to_vec(x, d):
    if d == 2:
        return np.array([np.cos(x[0]), np.sin(x[0])])
    return np.array([np.sin(x[0]) * np.cos(x[1]), np.sin(x[0]) * np.sin(x[1]), np.cos(x[0])])


def _vec_to_angles(v):
    if v.size == 2:
        return np.array([np.arctan2(v[1], v[0])])
    return np.array([np.arccos(np.clip(v[2], -1, 1)), np.arctan2(v[1], v[0])])


def sphere_maxabs(T, grid_resolution=720, n_refine=4):
    """Estimate ``max_{|v|=1} |T v^k|`` (the largest eigenvalue magnitude) for ``d <= 3``.

    Evaluates a grid over the sphere, then polishes the best grid points with
    Nelder-Mead in angle coordinates.  Returns ``(value, maximizer)``.
    """
    T = check_tensor(T)
    k, d = T.ndim, T.shape[0]
    P = _sphere_points(d, grid_resolution)
    if d == 1:
        return float(abs(T.ravel()[0])), P[0]
    vals = np.abs(np.einsum("pj,pj->p", P, _batched_contract(T, P)))
    best_i = np.argsort(vals)[::-1][:n_refine]
    best_val, best_v = float(vals[best_i[0]]), P[best_i[0]]
    for i in best_i:
        res = minimize(lambda x: -abs(multi_contract(T, _angles_to_vec(x, d), k)),
                       _vec_to_angles(P[i]), method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 2000})
        if -res.fun > best_val:
            best_val, best_v = float(-res.fun), _angles_to_vec(res.x, d)
    return best_val, best_v


def _batched_contract(T, P):
    """Rows ``T v^{k-1}`` for every row ``v`` of ``P``."""
    out = np.broadcast_to(T, (P.shape[0],) + T.shape)
    for _ in range(T.ndim - 1):
        out = np.einsum("pi,pi...->p...", P, out)
    return out


def verify_entry_bound(T, grid_resolution=720):
    """Return ``(lambda_maxabs, max|entry|, ratio)`` for checking the entry bound."""
    lam, _ = sphere_maxabs(T, grid_resolution)
    max_entry = float(np.max(np.abs(T)))
    ratio = lam / max_entry if max_entry > 0 else np.inf
    return lam, max_entry, ratio

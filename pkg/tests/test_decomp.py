import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hout.decomp import (BOUNDS, EIG_TOL, BudgetExceededError, Rank1Decomposition,
                         approx_rank1_decompose, best_rank1, hopm, leading_left_singular_vector,
                         rate_bound, sphere_maxabs, verify_entry_bound)
from hout.errors import DegenerateInputError
from hout.tensor import frobenius_norm, multi_contract, random_symmetric, tensor_power, unfold
from strategies import seeds, sym_tensors

e1, e2 = np.eye(2)

# frozen from a 30-digit mpmath evaluation of sqrt(1 - c^2 / d^k)
C3 = 0.192513069376894117
C4 = 0.0185758513931888545
RATE = {(3, 2): 0.997680980957783867, (3, 10): 0.999981469187364035,
        (4, 2): 0.999989216746392538, (4, 10): 0.999999982746887102}


def test_bound_constants():
    assert BOUNDS.c3 == pytest.approx(C3, rel=1e-15)
    assert BOUNDS.c4 == pytest.approx(C4, rel=1e-15)
    assert 0 < BOUNDS.c4 < BOUNDS.c3 <= 1


@pytest.mark.parametrize("k,d", sorted(RATE))
def test_rate_bound_values(k, d):
    assert rate_bound(k, d) == pytest.approx(RATE[k, d], rel=1e-14)


def test_rate_bound_matrix_case():
    assert rate_bound(2, 1) == 0.0


def test_hopm_rank1():
    v = np.array([0.6, 0.8])
    pair = hopm(tensor_power(v, 3))
    np.testing.assert_allclose(pair.vector, v, atol=1e-12)
    assert pair.eigenvalue == pytest.approx(1.0, abs=1e-12)
    assert pair.converged


def test_hopm_diagonal_tensor():
    T = 2 * tensor_power(e1, 3) + tensor_power(e2, 3)
    u = leading_left_singular_vector(unfold(T))
    np.testing.assert_allclose(np.abs(u), e1, atol=1e-15)
    pair = hopm(T)
    np.testing.assert_allclose(pair.vector, e1, atol=1e-12)
    assert pair.eigenvalue == pytest.approx(2.0, abs=1e-12)
    # the sphere oracle agrees that this is the dominant eigenvalue
    assert sphere_maxabs(T)[0] == pytest.approx(2.0, abs=1e-9)


def test_hopm_identity_matrix():
    pair = hopm(np.eye(3))
    assert pair.eigenvalue == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(pair.vector) == pytest.approx(1.0, abs=1e-12)


def test_hopm_zero_tensor():
    with pytest.raises(DegenerateInputError):
        hopm(np.zeros((2, 2, 2)))


def test_hopm_flags_non_convergence(rng):
    pair = hopm(random_symmetric(4, 4, rng), max_iters=1)
    assert pair.iterations == 1


@pytest.mark.parametrize("lam,k,sign,vec", [
    (5.0, 4, 1, 5 ** 0.25), (-5.0, 4, -1, 5 ** 0.25), (-5.0, 3, 1, -(5 ** (1 / 3)))])
def test_best_rank1_signs(lam, k, sign, vec):
    s, v = best_rank1(lam * tensor_power(np.array([1.0, 0.0]), k))
    assert s == sign
    np.testing.assert_allclose(v, [vec, 0.0], atol=1e-12)


def test_decompose_rank1():
    dec = approx_rank1_decompose(tensor_power(np.array([0.3, -1.2, 0.5]), 3), 1e-10)
    assert len(dec) == 1
    assert dec.residual_norms[-1] <= 1e-14


def test_decompose_zero():
    dec = approx_rank1_decompose(np.zeros((3, 3, 3, 3)), 1e-10)
    assert len(dec) == 0 and dec.residual_norms == [0.0]


def test_decompose_budget(rng):
    T = random_symmetric(3, 4, rng)
    with pytest.raises(BudgetExceededError) as info:
        approx_rank1_decompose(T, 1e-10, max_terms=2)
    assert len(info.value.partial) == 2


def test_decompose_rejects_bad_tau(rng):
    with pytest.raises(ValueError):
        approx_rank1_decompose(random_symmetric(2, 3, rng), 0.0)


def test_decompose_d2_ratios_below_bound(rng):
    T = random_symmetric(2, 3, rng)
    dec = approx_rank1_decompose(T, 1e-10)
    assert np.all(dec.ratios() <= RATE[3, 2])


def test_decomposition_json_round_trip(rng):
    dec = approx_rank1_decompose(random_symmetric(2, 4, rng), 1e-8)
    back = Rank1Decomposition.from_json(dec.to_json())
    np.testing.assert_array_equal(back.reconstruct(), dec.reconstruct())
    assert back.residual_norms == dec.residual_norms
    assert back.rate_bound == dec.rate_bound


def test_verify_entry_bound_axis():
    lam, entry, ratio = verify_entry_bound(tensor_power(e1, 3))
    assert lam == pytest.approx(1.0, abs=1e-12)
    assert entry == 1.0 and ratio >= BOUNDS.c3


def test_sphere_oracle_d3(rng):
    T = random_symmetric(3, 4, rng)
    lam, v = sphere_maxabs(T, grid_resolution=120)
    assert abs(multi_contract(T, v, 4)) == pytest.approx(lam, rel=1e-12)
    pair = hopm(T)
    assert abs(pair.eigenvalue) <= lam * (1 + 1e-9)


# --- properties -------------------------------------------------------------

def _check_pair(T, pair):
    k = T.ndim
    lam, v = pair.eigenvalue, pair.vector
    assert abs(np.linalg.norm(v) - 1.0) <= 1e-12
    if pair.converged:
        res = np.linalg.norm(multi_contract(T, v, k - 1) - lam * v)
        assert res <= EIG_TOL * max(1.0, abs(lam))
    norm = frobenius_norm(T)
    assert abs(lam) <= norm * (1 + 1e-12)
    # rank-1 subtraction identity
    lhs = frobenius_norm(T - lam * tensor_power(v, k)) ** 2
    assert lhs == pytest.approx(norm ** 2 - lam ** 2, rel=1e-10, abs=1e-12 * norm ** 2)


@given(sym_tensors(dmax=4))
def test_hopm_eigen_residual_and_subtraction_identity(T):
    _check_pair(T, hopm(T))


@given(sym_tensors(dmax=3), st.sampled_from([1e-4, 1e-8]))
def test_decomposition_invariants(T, tau):
    dec = approx_rank1_decompose(T, tau)
    r = np.asarray(dec.residual_norms)
    assert np.all(np.diff(r) < 0)
    assert r[-1] <= tau
    assert frobenius_norm(T - dec.reconstruct(T.shape[0])) <= tau * (1 + 1e-9) + 1e-13
    if T.ndim % 2 == 1:
        assert all(s == 1 for s in dec.signs)


@given(st.sampled_from([3, 4]), seeds)
def test_geometric_envelope_when_dominant(k, seed):
    """With the sphere oracle confirming each eigenpair is dominant, residuals stay in the envelope."""
    T = random_symmetric(2, k, np.random.default_rng(seed))
    dec = approx_rank1_decompose(T, 1e-6)
    r = dec.residual_norms
    R = T.copy()
    for ell, (s, v) in enumerate(dec.terms[:6], start=1):
        lam_max = sphere_maxabs(R, grid_resolution=90, n_refine=2)[0]
        dominant = abs(dec.eigenvalues[ell - 1]) >= lam_max * (1 - 1e-8)
        if dominant:
            assert r[ell] <= rate_bound(k, 2) * r[ell - 1] * (1 + 1e-12)
            assert r[ell] <= rate_bound(k, 2) ** ell * r[0] * (1 + 1e-12)
        else:
            break
        R = R - s * tensor_power(v, k)

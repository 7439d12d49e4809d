"""Shared hypothesis strategies."""

import numpy as np
from hypothesis import strategies as st

seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)
orders = st.sampled_from([2, 3, 4])
small_dims = st.integers(min_value=1, max_value=4)


def vectors(d, scale=3.0):
    return st.lists(st.floats(-scale, scale, allow_nan=False, allow_infinity=False),
                    min_size=d, max_size=d).map(np.array)


@st.composite
def sym_tensors(draw, k=None, d=None, dmax=4):
    from hout.tensor import random_symmetric
    k = draw(orders) if k is None else k
    d = draw(st.integers(1, dmax)) if d is None else d
    return random_symmetric(d, k, np.random.default_rng(draw(seeds)))


@st.composite
def moment_sets(draw, dmax=3, n=400):
    """Empirical moments of a skewed, heavy-tailed sample."""
    from hout.sigma import empirical_moments
    d = draw(st.integers(1, dmax))
    rng = np.random.default_rng(draw(seeds))
    Z = rng.standard_normal((n, d))
    A = rng.standard_normal((d, d)) / np.sqrt(d) + np.eye(d)
    B = 0.5 * rng.standard_normal((d, d)) / np.sqrt(d)
    X = rng.standard_normal(d) + Z @ A.T + (Z * np.abs(Z)) @ B.T + 0.3 * (Z ** 2) @ B
    return empirical_moments(X)

"""Moment-matching sigma points up to fourth order, built on symmetric rank-1 tensor decompositions."""

from .decomp import (BOUNDS, EigenPair, Rank1Decomposition, approx_rank1_decompose,
                     best_rank1, hopm, rate_bound, sphere_maxabs, verify_entry_bound)
from .errors import (BudgetExceededError, DecompositionError, DegenerateInputError,
                     EvaluationError, HoutError, NotPositiveDefiniteError, OrderRangeError,
                     ParameterError, ShapeError, StallError)
from .sigma import (HoutParams, MomentSet, SigmaEnsemble, empirical_moments, hout,
                    hout_condition, hout_ensemble, hout_params, propagate, sqrt_spd, sut,
                    sut_condition, weighted_moments)
from .tensor import (frobenius_norm, is_symmetric, multi_contract, n_mode_product,
                     symmetrize, tensor_power, unfold)

__version__ = "0.1.0"

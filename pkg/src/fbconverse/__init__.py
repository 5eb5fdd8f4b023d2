"""Converse bounds, simulations and hypothesis-testing tools for Gaussian channels with feedback."""

from fbconverse.awgn_bounds import (
    BoundReport,
    ScalarChannel,
    capacity,
    dispersion,
    finite_n_converse,
    kappa_constants,
    normal_approximation,
    theorem1_kappa_form,
)
from fbconverse.errors import DomainError
from fbconverse.hypothesis import beta_awgn, beta_finite, beta_lower_bound, metaconverse_check
from fbconverse.parallel import ParallelSpec, theorem2_bound, waterfill

__version__ = "0.1.0"

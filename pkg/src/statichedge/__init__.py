"""Utility-based static hedging of claims written on two risks."""
from .basket import (
    AllocationPair,
    IterationReport,
    StateSurface,
    check_support_condition,
    entropic_x,
    entropic_y,
    h_operator,
    iterate_exponential_basket,
    regauge,
    solve_quadratic_basket,
)
from .indifference import IndifferenceQuote, price_exponential, verify_indifference
from .market import (
    BivariateNormalSpec,
    GridAxis,
    JointDensityGrid,
    LetfMixtureSpec,
    MarginalDensity,
    MarketModel,
    discretize_bivariate_normal,
    implied_density_from_calls,
    letf_joint,
    letf_marginals,
)
from .replication import ReplicationPortfolio, decompose, default_kappa, reconstruct
from .single import (
    BudgetSpec,
    HedgeCurve,
    PayoffSurface,
    SolveReport,
    complete_market_optimizer,
    foc_residual_single,
    solve_exponential_single,
    solve_power_single,
    solve_quadratic_single,
    solve_single,
)
from .utility import UtilitySpec

__version__ = "0.1.0"

"""Exponential-utility indifference price of holding ``nu`` units of a claim ``h``.

The investor may hedge with any ``f(X_T)`` bought under the risk-neutral
x-marginal.  With ``nu`` units bought at unit price ``p`` and budget
``c - p nu``, the optimal expected utility must equal the optimum without the
claim at budget ``c``.  Using the closed-form single-asset value this gives

    gamma p nu = sum pt log(p_X / pt) - sum pt log((1/pt) sum_y P exp(-gamma nu h))

which does not involve ``c``.  Positive ``nu`` is a purchase.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpecError
from .market import MarketModel
from .single import PayoffSurface, _check_payoff, _log_row_mass, solve_exponential_single
from .utility import UtilitySpec

__all__ = ["IndifferenceQuote", "price_exponential", "verify_indifference"]


@dataclass(frozen=True)
class IndifferenceQuote:
    nu: float
    price: float
    gamma: float

    def __post_init__(self):
        if self.nu == 0:
            raise InvalidSpecError("nu must be non-zero")
        if not all(math.isfinite(v) for v in (self.nu, self.price, self.gamma)):
            raise InvalidSpecError("quote fields must be finite")


def _check(gamma, nu):
    gamma, nu = float(gamma), float(nu)
    if not (gamma > 0 and math.isfinite(gamma)):
        raise InvalidSpecError("gamma must be positive and finite")
    if nu == 0 or not math.isfinite(nu):
        raise InvalidSpecError("nu must be finite and non-zero")
    return gamma, nu


def price_exponential(model: MarketModel, h: PayoffSurface, gamma: float, nu: float) -> IndifferenceQuote:
    gamma, nu = _check(gamma, nu)
    hv = _check_payoff(model, h)
    pt = model.pt_x.mass
    s = pt > 0
    log_ratio = np.log(model.p_x[s]) - np.log(pt[s])
    L = _log_row_mass(model.mass[s], -gamma * nu * hv[s], axis=1) - np.log(pt[s])
    gpn = float(np.dot(pt[s], log_ratio) - np.dot(pt[s], L))
    return IndifferenceQuote(nu, gpn / (gamma * nu), gamma)


def verify_indifference(
    model: MarketModel, h: PayoffSurface, gamma: float, nu: float, price: float, c: float = 0.0
) -> float:
    """``|V(c - p nu; nu h) - V(c; 0)|`` with both optima from the single-asset solver."""
    gamma, nu = _check(gamma, nu)
    u = UtilitySpec("exponential", gamma)
    held = PayoffSurface(h.axis_x, h.axis_y, -nu * _check_payoff(model, h))
    none = PayoffSurface(h.axis_x, h.axis_y, np.zeros_like(held.values))
    _, with_claim = solve_exponential_single(model, held, c - price * nu, u)
    _, without = solve_exponential_single(model, none, c, u)
    return abs(with_claim.expected_utility - without.expected_utility)

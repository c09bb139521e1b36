"""Exponential, power, logarithmic and concave-quadratic utilities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpecError, UtilityDomainError, UtilityRangeError

KINDS = ("exponential", "power", "logarithmic", "quadratic")
INCREASING_KINDS = ("exponential", "power", "logarithmic")


@dataclass(frozen=True)
class UtilitySpec:
    """Utility family and its risk parameter.

    exponential  ``U(x) = -exp(-gamma x) / gamma``        (gamma > 0)
    power        ``U(x) = x**(1-gamma) / (1-gamma)``       (gamma > 0, gamma != 1, x > 0)
    logarithmic  ``U(x) = log x``                          (gamma fixed to 1, x > 0)
    quadratic    ``U(x) = gamma x - x**2 / 2``             (gamma >= 0)

    The exponential form is always the ``1/gamma``-scaled one; dropping the
    scale changes expected utilities by a positive factor and leaves every
    optimizer unchanged.
    """

    kind: str
    gamma: float = 1.0

    def __post_init__(self):
        kind = str(self.kind).lower()
        gamma = float(self.gamma)
        if kind not in KINDS:
            raise InvalidSpecError(f"unknown utility kind {self.kind!r}; expected one of {KINDS}")
        if not np.isfinite(gamma):
            raise InvalidSpecError("gamma must be finite")
        if kind in ("exponential", "power") and gamma <= 0:
            raise InvalidSpecError(f"{kind} utility needs gamma > 0")
        if kind == "power" and gamma == 1.0:
            raise InvalidSpecError("power utility with gamma = 1 is the logarithmic kind")
        if kind == "logarithmic":
            gamma = 1.0
        if kind == "quadratic" and gamma < 0:
            raise InvalidSpecError("quadratic utility needs gamma >= 0")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "gamma", gamma)

    @property
    def increasing(self) -> bool:
        return self.kind in INCREASING_KINDS

    def _check_domain(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind in ("power", "logarithmic") and np.any(~(x > 0)):
            raise UtilityDomainError(f"{self.kind} utility is defined for positive wealth only")
        return x

    def value(self, x):
        x = self._check_domain(x)
        g = self.gamma
        if self.kind == "exponential":
            return -np.exp(-g * x) / g
        if self.kind == "power":
            return x ** (1.0 - g) / (1.0 - g)
        if self.kind == "logarithmic":
            return np.log(x)
        return g * x - 0.5 * x * x

    def marginal(self, x):
        x = self._check_domain(x)
        g = self.gamma
        if self.kind == "exponential":
            return np.exp(-g * x)
        if self.kind in ("power", "logarithmic"):
            return x ** (-g)
        return g - x

    def inverse_marginal(self, m):
        m = np.asarray(m, dtype=float)
        g = self.gamma
        if self.kind == "quadratic":
            return g - m
        if np.any(~(m > 0)):
            raise UtilityRangeError(f"{self.kind} marginal utility only takes positive values")
        if self.kind == "exponential":
            return -np.log(m) / g
        return m ** (-1.0 / g)


def evaluate(u: UtilitySpec, x):
    return u.value(x)


def marginal(u: UtilitySpec, x):
    return u.marginal(x)


def inverse_marginal(u: UtilitySpec, m):
    return u.inverse_marginal(m)

"""Joint static hedges ``f(X_T) + g(Y_T)`` for a sold basket claim ``h(X_T, Y_T)``.

Exponential utility is handled by iterating the entropic map
``H = H^Y o H^X`` on the residual surface ``xi = h - c - f - g``; the
quadratic (mean-variance) case alternates conditional-expectation updates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from .errors import (
    AllocationUnboundedError,
    EquivalenceError,
    InvalidSpecError,
    SupportError,
)
from .market import GridAxis, MarketModel
from .single import (
    HedgeCurve,
    PayoffSurface,
    SolveReport,
    _budget,
    _check_payoff,
    _log_row_mass,
    fill_off_support,
)

__all__ = [
    "StateSurface",
    "AllocationPair",
    "IterationReport",
    "SupportCondition",
    "BasketSolveReport",
    "entropic_x",
    "entropic_y",
    "h_operator",
    "product_mean",
    "iterate_exponential_basket",
    "check_support_condition",
    "regauge",
    "solve_quadratic_basket",
    "SURPLUS_CHOICES",
]

SURPLUS_CHOICES = ("f", "g", "split")
GUARD_WINDOW = 100
GUARD_FACTOR = 1e6


@dataclass(frozen=True, eq=False)
class StateSurface:
    axis_x: GridAxis
    axis_y: GridAxis
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (len(self.axis_x), len(self.axis_y)):
            raise InvalidSpecError(f"surface shape {v.shape} does not match the axes")
        if not np.all(np.isfinite(v)):
            raise InvalidSpecError("surface contains NaN or Inf")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_payoff(cls, h: PayoffSurface, shift: float = 0.0) -> "StateSurface":
        return cls(h.axis_x, h.axis_y, h.values - shift)


@dataclass(frozen=True)
class AllocationPair:
    f: HedgeCurve
    g: HedgeCurve
    split_f: float
    split_g: float

    @property
    def total(self) -> float:
        return self.split_f + self.split_g

    def surface(self) -> np.ndarray:
        return self.f.values[:, None] + self.g.values[None, :]


@dataclass(frozen=True)
class IterationReport:
    iterations: int
    l2_residuals: Tuple[float, ...]
    expected_utilities: Tuple[float, ...]
    converged: bool
    support_condition_met: bool
    foc_residual: float = float("nan")
    certainty_equivalents: Tuple[float, ...] = ()
    zero_cells: Tuple[Tuple[int, int], ...] = ()

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "final_l2_residual": self.l2_residuals[-1] if self.l2_residuals else float("nan"),
            "expected_utility": self.expected_utilities[-1] if self.expected_utilities else float("nan"),
            "support_condition_met": self.support_condition_met,
            "foc_residual": self.foc_residual,
        }


@dataclass(frozen=True)
class BasketSolveReport(SolveReport):
    iterations: int = 0
    converged: bool = True

    def as_dict(self) -> dict:
        d = super().as_dict()
        d.update(iterations=self.iterations, converged=self.converged)
        return d


@dataclass(frozen=True)
class SupportCondition:
    """Result of :func:`check_support_condition`; truthy when the condition holds."""

    met: bool
    zero_cells: Tuple[Tuple[int, int], ...] = field(default=())

    def __bool__(self) -> bool:
        return self.met


def check_support_condition(model: MarketModel) -> SupportCondition:
    """Every cell in the product of the marginal supports must carry positive mass."""
    prod = (model.p_x > 0)[:, None] & (model.p_y > 0)[None, :]
    zero = np.argwhere(prod & ~(model.mass > 0))
    return SupportCondition(zero.size == 0, tuple((int(i), int(j)) for i, j in zero))


def product_mean(model: MarketModel, values: np.ndarray) -> float:
    """Expectation under the product of the risk-neutral marginals."""
    return float(model.pt_x.mass @ values @ model.pt_y.mass)


def _entropic_rows(P: np.ndarray, xi: np.ndarray, pt: np.ndarray, gamma: float) -> np.ndarray:
    """Row-wise ``(1/gamma) log(sum_y P e^{gamma xi} / pt)``; NaN where ``pt = 0``."""
    s = pt > 0
    out = np.full(len(pt), np.nan)
    L = _log_row_mass(P[s], gamma * xi[s], axis=1)
    if not np.all(np.isfinite(L)):
        raise SupportError("entropic inner sum vanishes on the risk-neutral support")
    out[s] = (L - np.log(pt[s])) / gamma
    return out


def _check_gamma(gamma) -> float:
    gamma = float(gamma)
    if not (gamma > 0 and math.isfinite(gamma)):
        raise InvalidSpecError("gamma must be positive and finite")
    return gamma


def _check_surface(model: MarketModel, xi) -> np.ndarray:
    if not (xi.axis_x.same_as(model.axis_x) and xi.axis_y.same_as(model.axis_y)):
        raise InvalidSpecError("surface grid does not match the model grid")
    return xi.values


def entropic_x(model: MarketModel, xi: StateSurface, gamma: float) -> HedgeCurve:
    """``(1/gamma) log((1/pt_x(x)) sum_y p(x, y) exp(gamma xi(x, y)))``.

    Only meaningful on the support of ``pt_x``; other points are interpolated.
    """
    gamma = _check_gamma(gamma)
    v = _entropic_rows(model.mass, _check_surface(model, xi), model.pt_x.mass, gamma)
    s = model.pt_x.mass > 0
    return HedgeCurve(model.axis_x, fill_off_support(model.axis_x, np.where(s, v, 0.0), s))


def entropic_y(model: MarketModel, xi: StateSurface, gamma: float) -> HedgeCurve:
    gamma = _check_gamma(gamma)
    v = _entropic_rows(model.mass.T, _check_surface(model, xi).T, model.pt_y.mass, gamma)
    s = model.pt_y.mass > 0
    return HedgeCurve(model.axis_y, fill_off_support(model.axis_y, np.where(s, v, 0.0), s))


def _centered(e: np.ndarray, pt: np.ndarray) -> np.ndarray:
    s = pt > 0
    out = np.zeros(len(pt))
    out[s] = e[s] - np.dot(pt[s], e[s])
    return out


def _h_step(P, pt_x, pt_y, xi, gamma):
    """One application of the entropic map; returns (new xi, f increment, g increment)."""
    df = _centered(_entropic_rows(P, xi, pt_x, gamma), pt_x)
    hx = xi - df[:, None]
    dg = _centered(_entropic_rows(P.T, hx.T, pt_y, gamma), pt_y)
    return hx - dg[None, :], df, dg


def h_operator(model: MarketModel, xi: StateSurface, gamma: float) -> StateSurface:
    """``H^Y(H^X(xi))`` with ``H^X(xi) = xi - (E^X xi - E~[E^X xi])``.

    Intended for surfaces with zero mean under the product coupling; the map
    itself is well defined for any surface.
    """
    gamma = _check_gamma(gamma)
    new, _, _ = _h_step(model.mass, model.pt_x.mass, model.pt_y.mass, _check_surface(model, xi), gamma)
    return StateSurface(model.axis_x, model.axis_y, new)


def _exp_utility(P, mask, position, gamma) -> Tuple[float, float]:
    """Expected utility and its certainty equivalent, the latter computed in log space."""
    lse = float(logsumexp(-gamma * position[mask], b=P[mask]))
    eu = -math.exp(lse) / gamma if lse < 700 else -math.inf
    return eu, -lse / gamma


def regauge(pair: AllocationPair, model: MarketModel, split_f: float) -> AllocationPair:
    """Shift ``(f, g) -> (f + k, g - k)`` so that the risk-neutral cost of ``f`` is ``split_f``."""
    k = split_f - float(np.dot(model.pt_x.mass, pair.f.values))
    return AllocationPair(pair.f.shifted(k), pair.g.shifted(-k), pair.split_f + k, pair.split_g - k)


def _basket_foc(P, pt_x, pt_y, position, gamma) -> float:
    mask = P > 0
    w = np.where(mask, P * np.exp(-gamma * np.where(mask, position, 0.0)), 0.0)
    kappa = float(w.sum())
    rx = np.abs(w.sum(axis=1) - kappa * pt_x)
    ry = np.abs(w.sum(axis=0) - kappa * pt_y)
    return float(max(rx.max(), ry.max()) / max(1.0, kappa))


def iterate_exponential_basket(
    model: MarketModel,
    h: PayoffSurface,
    budget,
    gamma: float,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    surplus_to: str = "split",
    allocation_f: Optional[float] = None,
    init: Optional[Tuple[HedgeCurve, HedgeCurve]] = None,
) -> Tuple[AllocationPair, IterationReport]:
    """Fixed-point iteration for the exponential-utility basket hedge.

    The scheme runs on ``xi = h - c0 - f - g`` with ``c0`` the product-coupling
    value of ``h``, so every iterate has zero product mean.  Each step applies
    the entropic map and moves its increments into ``f`` and ``g``.  The
    iteration stops once the probability-weighted l2 size of
    ``H(xi) - xi`` falls below ``tol``; ``iterations`` counts the updates
    actually applied.  Afterwards ``c0`` is split equally and the surplus
    ``c - c0`` goes to ``f``, ``g`` or half to each (``surplus_to``), which is
    a pure cash translation under exponential utility.  ``allocation_f``, if
    given, re-gauges the pair so that ``f`` costs exactly that amount.
    """
    gamma = _check_gamma(gamma)
    c = _budget(budget)
    if not tol > 0:
        raise InvalidSpecError("tol must be positive")
    if int(max_iter) < 0:
        raise InvalidSpecError("max_iter must be non-negative")
    if surplus_to not in SURPLUS_CHOICES:
        raise InvalidSpecError(f"surplus_to must be one of {SURPLUS_CHOICES}")
    hv = _check_payoff(model, h)
    P = model.mass
    mask = P > 0
    pt_x = model.pt_x.mass
    pt_y = model.pt_y.mass
    c0 = product_mean(model, hv)
    fa = np.zeros(len(pt_x))
    ga = np.zeros(len(pt_y))
    if init is not None:
        f0 = np.asarray(init[0].values, dtype=float)
        g0 = np.asarray(init[1].values, dtype=float)
        fa = np.where(pt_x > 0, f0 - np.dot(pt_x, f0), 0.0)
        ga = np.where(pt_y > 0, g0 - np.dot(pt_y, g0), 0.0)
    xi = hv - c0 - fa[:, None] - ga[None, :]
    offset = c - c0
    h_scale = max(float(np.max(np.abs(hv))), 1.0)

    residuals = []
    utilities = []
    equivalents = []
    converged = False
    streak = 0
    prev_sup = max(np.max(np.abs(fa)), np.max(np.abs(ga)))
    n = 0
    while True:
        new, df, dg = _h_step(P, pt_x, pt_y, xi, gamma)
        r = math.sqrt(float(np.sum(P[mask] * (new - xi)[mask] ** 2)))
        residuals.append(r)
        eu, ce = _exp_utility(P, mask, offset - xi, gamma)
        utilities.append(eu)
        equivalents.append(ce)
        if r < tol:
            converged = True
            break
        if n >= max_iter:
            break
        fa += df
        ga += dg
        xi = new
        n += 1
        sup = max(np.max(np.abs(fa)), np.max(np.abs(ga)))
        if sup > prev_sup and r < residuals[-2 if len(residuals) > 1 else -1]:
            streak += 1
        else:
            streak = 0
        prev_sup = sup
        if streak >= GUARD_WINDOW and sup > GUARD_FACTOR * h_scale:
            raise AllocationUnboundedError(
                f"hedge components grew for {streak} consecutive iterations (sup-norm {sup:.3g}) "
                "while the residual shrank; the support condition "
                f"{'holds' if check_support_condition(model) else 'fails'} for this model"
            )

    share_f = {"f": 1.0, "g": 0.0, "split": 0.5}[surplus_to]
    f = c0 / 2 + fa + share_f * offset
    g = c0 / 2 + ga + (1.0 - share_f) * offset
    foc = _basket_foc(P, pt_x, pt_y, f[:, None] + g[None, :] - hv, gamma)
    f = fill_off_support(model.axis_x, f, pt_x > 0)
    g = fill_off_support(model.axis_y, g, pt_y > 0)
    split_f = float(np.dot(pt_x, f))
    pair = AllocationPair(HedgeCurve(model.axis_x, f), HedgeCurve(model.axis_y, g), split_f, c - split_f)
    if allocation_f is not None:
        pair = regauge(pair, model, float(allocation_f))
    support = check_support_condition(model)
    report = IterationReport(
        iterations=n,
        l2_residuals=tuple(residuals),
        expected_utilities=tuple(utilities),
        converged=converged,
        support_condition_met=support.met,
        foc_residual=foc,
        certainty_equivalents=tuple(equivalents),
        zero_cells=support.zero_cells,
    )
    return pair, report


def _quadratic_foc(P, pt_x, pt_y, d, gamma, lam) -> float:
    w = P * (gamma - d)
    rx = np.abs(w.sum(axis=1) + lam * pt_x)
    ry = np.abs(w.sum(axis=0) + lam * pt_y)
    return float(max(rx.max(), ry.max()) / max(1.0, abs(lam)))


def solve_quadratic_basket(
    model: MarketModel,
    h: PayoffSurface,
    budget,
    gamma: float,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> Tuple[AllocationPair, BasketSolveReport]:
    """Mean-variance basket hedge by alternating conditional-expectation updates.

    ``f <- E[h - g | X] + lambda pt_x / p_x + gamma`` followed by the mirror
    update for ``g``.  A first pass uses ``lambda = 0``; if the result costs
    more than ``c`` the multiplier is re-solved from the budget at every sweep.
    The gauge is fixed by ``E~f = E~g`` after each sweep.
    """
    gamma = float(gamma)
    if not (gamma >= 0 and math.isfinite(gamma)):
        raise InvalidSpecError("quadratic utility needs a finite gamma >= 0")
    c = _budget(budget)
    hv = _check_payoff(model, h)
    P = model.mass
    px, py = model.p_x, model.p_y
    pt_x, pt_y = model.pt_x.mass, model.pt_y.mass
    sx, sy = pt_x > 0, pt_y > 0
    if np.any(px[sx] <= 0) or np.any(py[sy] <= 0):
        raise EquivalenceError("subjective marginal vanishes on the risk-neutral support")
    rx = np.where(sx, pt_x / np.where(sx, px, 1.0), 0.0)
    ry = np.where(sy, pt_y / np.where(sy, py, 1.0), 0.0)
    safe_px = np.where(px > 0, px, 1.0)
    safe_py = np.where(py > 0, py, 1.0)
    Ph_x = (P * hv).sum(axis=1) / safe_px
    Ph_y = (P * hv).sum(axis=0) / safe_py

    def cond_x(g):
        return Ph_x - (P @ g) / safe_px

    def cond_y(f):
        return Ph_y - (P.T @ f) / safe_py

    def run(binding: bool):
        f = np.zeros(len(pt_x))
        g = np.zeros(len(pt_y))
        lam = 0.0
        damp = 1.0
        increases = 0
        prev = math.inf
        change = math.inf
        for it in range(1, max_iter + 1):
            if binding:
                lam = (c - 2 * gamma - np.dot(pt_x, cond_x(g)) - np.dot(pt_y, cond_y(f))) / (
                    np.dot(pt_x, rx) + np.dot(pt_y, ry)
                )
            f_new = np.where(sx, cond_x(g) + lam * rx + gamma, 0.0)
            g_new = np.where(sy, cond_y(f_new) + lam * ry + gamma, 0.0)
            k = 0.5 * (np.dot(pt_y, g_new) - np.dot(pt_x, f_new))
            f_new = np.where(sx, f_new + k, 0.0)
            g_new = np.where(sy, g_new - k, 0.0)
            if damp < 1.0:
                f_new = damp * f_new + (1 - damp) * f
                g_new = damp * g_new + (1 - damp) * g
            change = math.sqrt(float(np.dot(px, (f_new - f) ** 2) + np.dot(py, (g_new - g) ** 2)))
            f, g = f_new, g_new
            if change < tol:
                return f, g, lam, it, True
            if change > prev:
                increases += 1
                if increases >= 2:
                    damp = 0.5
            prev = change
        return f, g, lam, max_iter, False

    f, g, lam, iters, ok = run(False)
    if np.dot(pt_x, f) + np.dot(pt_y, g) > c:
        f, g, lam, iters, ok = run(True)
        lam = float(lam)
    d = f[:, None] + g[None, :] - hv
    mask = P > 0
    report = BasketSolveReport(
        lambda_star=float(lam),
        budget_used=float(np.dot(pt_x, f) + np.dot(pt_y, g)),
        foc_residual_sup=_quadratic_foc(P, pt_x, pt_y, np.where(mask, d, 0.0), gamma, lam),
        expected_utility=float(np.dot(P[mask], gamma * d[mask] - 0.5 * d[mask] ** 2)),
        iterations=iters,
        converged=ok,
    )
    f = fill_off_support(model.axis_x, f, sx)
    g = fill_off_support(model.axis_y, g, sy)
    split_f = float(np.dot(pt_x, f))
    pair = AllocationPair(HedgeCurve(model.axis_x, f), HedgeCurve(model.axis_y, g), split_f, report.budget_used - split_f)
    return pair, report

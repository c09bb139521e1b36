"""Optimal static hedge ``f(X_T)`` of a sold claim ``h(X_T, Y_T)`` under a budget.

All solvers maximize ``sum_ij P[i,j] U(f[i] - h[i,j])`` subject to
``sum_i pt_x[i] f[i] <= c`` on the model grid.  Grid points outside the
support of the x-marginal carry no mass under either measure; the hedge there
is filled by linear interpolation so that returned curves are finite and can
be replicated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy import integrate
from scipy.special import gamma as gamma_fn
from scipy.special import logsumexp

from .errors import (
    ConvergenceError,
    EquivalenceError,
    InfeasibleBudgetError,
    InvalidSpecError,
    ScaleOverflowError,
    SupportError,
    UtilityDomainError,
)
from .market import GridAxis, MarginalDensity, MarketModel
from .utility import UtilitySpec

__all__ = [
    "PayoffSurface",
    "HedgeCurve",
    "BudgetSpec",
    "SolveReport",
    "solve_single",
    "solve_exponential_single",
    "solve_power_single",
    "solve_quadratic_single",
    "complete_market_optimizer",
    "foc_residual_single",
    "expected_utility_single",
    "mean_variance_threshold",
    "hhat",
    "hhat_transform",
]

BUDGET_TOL = 1e-10
MAX_DOUBLINGS = 1000


@dataclass(frozen=True, eq=False)
class PayoffSurface:
    axis_x: GridAxis
    axis_y: GridAxis
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (len(self.axis_x), len(self.axis_y)):
            raise InvalidSpecError(f"payoff shape {v.shape} does not match the axes")
        if not np.all(np.isfinite(v)):
            raise InvalidSpecError("payoff contains NaN or Inf")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def on(cls, model: MarketModel, fn: Callable) -> "PayoffSurface":
        """Evaluate ``fn(x, y)`` on the model grid."""
        x, y = np.meshgrid(model.axis_x.points, model.axis_y.points, indexing="ij")
        return cls(model.axis_x, model.axis_y, np.broadcast_to(fn(x, y), x.shape))

    def scaled(self, factor: float) -> "PayoffSurface":
        return PayoffSurface(self.axis_x, self.axis_y, factor * self.values)

    def transpose(self) -> "PayoffSurface":
        return PayoffSurface(self.axis_y, self.axis_x, self.values.T)


@dataclass(frozen=True, eq=False)
class HedgeCurve:
    axis: GridAxis
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.size != len(self.axis):
            raise InvalidSpecError("hedge curve length does not match its axis")
        if not np.all(np.isfinite(v)):
            raise InvalidSpecError("hedge curve contains NaN or Inf")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def shifted(self, k: float) -> "HedgeCurve":
        return HedgeCurve(self.axis, self.values + k)


@dataclass(frozen=True)
class BudgetSpec:
    c: float

    def __post_init__(self):
        if not math.isfinite(self.c):
            raise InvalidSpecError("budget must be finite")


@dataclass(frozen=True)
class SolveReport:
    lambda_star: float
    budget_used: float
    foc_residual_sup: float
    expected_utility: float

    def as_dict(self) -> dict:
        return {
            "lambda_star": self.lambda_star,
            "budget_used": self.budget_used,
            "foc_residual_sup": self.foc_residual_sup,
            "expected_utility": self.expected_utility,
        }


def _budget(budget: Union[BudgetSpec, float]) -> float:
    return budget.c if isinstance(budget, BudgetSpec) else BudgetSpec(float(budget)).c


def _check_payoff(model: MarketModel, h: PayoffSurface) -> np.ndarray:
    if not (h.axis_x.same_as(model.axis_x) and h.axis_y.same_as(model.axis_y)):
        raise InvalidSpecError("payoff grid does not match the model grid")
    return h.values


def fill_off_support(axis: GridAxis, values: np.ndarray, support: np.ndarray) -> np.ndarray:
    """Linear interpolation (flat extrapolation) over points without mass."""
    if support.all():
        return values
    if not support.any():
        raise SupportError("marginal has empty support")
    out = values.copy()
    pts = axis.points
    out[~support] = np.interp(pts[~support], pts[support], values[support])
    return out


def _log_row_mass(P: np.ndarray, a: np.ndarray, axis: int) -> np.ndarray:
    """``log sum P * exp(a)`` along ``axis`` using only cells with positive mass."""
    pos = P > 0
    masked = np.where(pos, a + np.log(np.where(pos, P, 1.0)), -np.inf)
    return logsumexp(masked, axis=axis)


def expected_utility_single(model: MarketModel, h: PayoffSurface, f, u: UtilitySpec) -> float:
    hv = _check_payoff(model, h)
    P = model.mass
    mask = P > 0
    f = np.asarray(getattr(f, "values", f), dtype=float)
    d = (f[:, None] - hv)[mask]
    return float(np.dot(P[mask], u.value(d)))


def foc_residual_single(model: MarketModel, h: PayoffSurface, f, u: UtilitySpec, lambda_star: float) -> float:
    """Scaled sup-norm of ``sum_y P U'(f - h) + lambda * pt_x`` over the x-support."""
    hv = _check_payoff(model, h)
    P = model.mass
    mask = P > 0
    f = np.asarray(getattr(f, "values", f), dtype=float)
    d = f[:, None] - hv
    if u.kind in ("power", "logarithmic"):
        bad = np.flatnonzero((mask & ~(d > 0)).any(axis=1))
        if bad.size:
            i = int(bad[0])
            raise UtilityDomainError(
                f"{u.kind} utility: hedge does not exceed the payoff at x={model.axis_x.points[i]!r} (index {i})"
            )
    up = np.zeros_like(d)
    up[mask] = u.marginal(d[mask])
    row = (P * up).sum(axis=1) + lambda_star * model.pt_x.mass
    support = model.pt_x.mass > 0
    return float(np.max(np.abs(row[support])) / max(1.0, abs(lambda_star)))


def _report(model, h, f, u, lam) -> SolveReport:
    return SolveReport(
        lambda_star=float(lam),
        budget_used=float(np.dot(model.pt_x.mass, f)),
        foc_residual_sup=foc_residual_single(model, h, f, u, lam),
        expected_utility=expected_utility_single(model, h, f, u),
    )


def solve_exponential_single(
    model: MarketModel, h: PayoffSurface, budget, u: UtilitySpec
) -> Tuple[HedgeCurve, SolveReport]:
    """Closed-form optimal hedge for exponential utility.

    ``f(x) = c + (L(x) - E~[L]) / gamma`` with
    ``L(x) = log(sum_y P(x, y) exp(gamma h(x, y)) / pt_x(x))``, and the
    multiplier ``lambda = -exp(-gamma c + E~[L])``.  The inner sums are
    evaluated with a max shift, so large ``gamma * h`` never overflows.
    """
    if u.kind != "exponential":
        raise InvalidSpecError("solve_exponential_single needs exponential utility")
    c = _budget(budget)
    hv = _check_payoff(model, h)
    g = u.gamma
    pt = model.pt_x.mass
    s = pt > 0
    L = _log_row_mass(model.mass[s], g * hv[s], axis=1) - np.log(pt[s])
    if not np.all(np.isfinite(L)):
        raise SupportError("inner exponential sums are not finite and positive on the risk-neutral support")
    mean_l = float(np.dot(pt[s], L))
    f = np.zeros(len(pt))
    f[s] = c + (L - mean_l) / g
    f = fill_off_support(model.axis_x, f, s)
    if -g * c + mean_l > 709.0:
        raise ScaleOverflowError(
            f"multiplier exp({-g * c + mean_l:.6g}) exceeds floating-point range; rescale the payoff or gamma"
        )
    lam = -math.exp(-g * c + mean_l)
    return HedgeCurve(model.axis_x, f), _report(model, h, f, u, lam)


def _bisect_log_multiplier(budget_of: Callable[[float], float], c: float, tol: float) -> float:
    """Solve ``budget_of(t) = c`` for ``t = log(-lambda)``; ``budget_of`` is decreasing.

    The bracket grows by doubling from ``t = 0`` (``lambda = -1``).
    """

    def gap(t):
        with np.errstate(over="ignore", invalid="ignore"):
            v = budget_of(t) - c
        if np.isnan(v):
            raise ConvergenceError(f"budget evaluation failed at log(-lambda)={t!r}")
        return v

    g0 = gap(0.0)
    if g0 == 0.0:
        return 0.0
    direction = 1.0 if g0 > 0 else -1.0
    lo = hi = 0.0
    for k in range(MAX_DOUBLINGS):
        t = direction * 2.0 ** k
        gt = gap(t)
        if (gt > 0) != (g0 > 0) or gt == 0:
            lo, hi = (0.0 if k == 0 else direction * 2.0 ** (k - 1), t)
            break
    else:
        raise ConvergenceError(
            f"could not bracket the multiplier after {MAX_DOUBLINGS} doublings (last gap {gt!r})"
        )
    if lo > hi:
        lo, hi = hi, lo
    best_t, best_gap = (lo, gap(lo))
    ghi = gap(hi)
    if abs(ghi) < abs(best_gap):
        best_t, best_gap = hi, ghi
    for _ in range(2000):
        if abs(best_gap) <= tol:
            break
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        gm = gap(mid)
        if abs(gm) < abs(best_gap):
            best_t, best_gap = mid, gm
        if gm > 0:
            lo = mid
        else:
            hi = mid
    return best_t


def _invert_hhat_rows(P: np.ndarray, W: np.ndarray, log_target: np.ndarray, gamma: float) -> np.ndarray:
    """Solve ``sum_y P (d + W)^(-gamma) = exp(log_target)`` for ``d > 0`` row-wise.

    ``W >= 0`` on positive-mass cells with ``min W = 0`` per row, so the left
    side decreases from ``+inf`` to 0.  Works on ``s = log d`` with a
    bracketed Newton iteration (bisection fallback).
    """
    mask = P > 0
    logP = np.where(mask, np.log(np.where(mask, P, 1.0)), -np.inf)

    def phi(s):
        d = np.exp(s)
        logbase = np.log(d[:, None] + W)
        a = np.where(mask, logP - gamma * logbase, -np.inf)
        lh = logsumexp(a, axis=1)
        wts = np.exp(a - lh[:, None])
        dlog = -gamma * d * np.sum(wts / (d[:, None] + W), axis=1)
        return lh - log_target, dlog

    row_mass = P.sum(axis=1)
    s0 = np.clip((np.log(row_mass) - log_target) / gamma, -600.0, 600.0)
    lo = s0 - 1.0
    hi = s0 + 1.0
    for k in range(MAX_DOUBLINGS):
        plo, _ = phi(lo)
        phi_hi, _ = phi(hi)
        need_lo = ~(plo > 0)
        need_hi = ~(phi_hi < 0)
        if not (need_lo.any() or need_hi.any()):
            break
        step = 2.0 ** min(k, 60)
        lo = np.where(need_lo, np.maximum(lo - step, -700.0), lo)
        hi = np.where(need_hi, np.minimum(hi + step, 700.0), hi)
    else:
        raise ConvergenceError(f"pointwise inversion bracket not found after {MAX_DOUBLINGS} doublings")
    s = np.clip(s0, lo, hi)
    for _ in range(200):
        val, dval = phi(s)
        pos = val > 0
        lo = np.where(pos, s, lo)
        hi = np.where(pos, hi, s)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = s - val / dval
        ok = (newton > lo) & (newton < hi) & np.isfinite(newton)
        s_new = np.where(ok, newton, 0.5 * (lo + hi))
        done = (np.abs(val) <= 4e-16) | (hi - lo <= 1e-15 * (1.0 + np.abs(s)))
        if done.all():
            break
        s = np.where(done, s, s_new)
    return np.exp(s)


def solve_power_single(
    model: MarketModel, h: PayoffSurface, budget, u: UtilitySpec, budget_tol: float = BUDGET_TOL
) -> Tuple[HedgeCurve, SolveReport]:
    """Optimal hedge for power or logarithmic utility.

    For each grid ``x`` the first-order condition
    ``sum_y P(x, y) (f - h(x, y))^(-gamma) = -lambda pt_x(x)`` is inverted
    pointwise (the left side is strictly decreasing in ``f``), and ``lambda``
    is found by bisection so that the budget binds.
    """
    if u.kind not in ("power", "logarithmic"):
        raise InvalidSpecError("solve_power_single needs power or logarithmic utility")
    c = _budget(budget)
    hv = _check_payoff(model, h)
    pt = model.pt_x.mass
    s = pt > 0
    P = model.mass[s]
    H = hv[s]
    masked_h = np.where(P > 0, H, -np.inf)
    top = masked_h.max(axis=1)
    floor = float(np.dot(pt[s], top))
    if not c > floor:
        raise InfeasibleBudgetError(
            f"budget {c!r} cannot keep the hedge above the payoff (needs more than {floor!r})"
        )
    W = np.where(P > 0, top[:, None] - H, 0.0)
    log_pt = np.log(pt[s])
    g = u.gamma

    def hedge(t):
        return top + _invert_hhat_rows(P, W, t + log_pt, g)

    t = _bisect_log_multiplier(lambda t: float(np.dot(pt[s], hedge(t))), c, budget_tol)
    f = np.zeros(len(pt))
    f[s] = hedge(t)
    f = fill_off_support(model.axis_x, f, s)
    return HedgeCurve(model.axis_x, f), _report(model, h, f, u, -math.exp(t))


def _conditional_mean_x(model: MarketModel, hv: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """``E[h | X = x]`` and ``pt_x / p_x`` on the risk-neutral x-support."""
    pt = model.pt_x.mass
    px = model.p_x
    s = pt > 0
    if np.any(px[s] <= 0):
        raise EquivalenceError("subjective x-marginal vanishes where the risk-neutral one does not")
    cond = np.zeros(len(pt))
    ratio = np.zeros(len(pt))
    cond[s] = (model.mass[s] * hv[s]).sum(axis=1) / px[s]
    ratio[s] = pt[s] / px[s]
    return cond, ratio


def mean_variance_threshold(model: MarketModel, h: PayoffSurface, gamma: float) -> float:
    """Budget above which the quadratic-utility hedge ignores the constraint."""
    cond, _ = _conditional_mean_x(model, _check_payoff(model, h))
    return float(np.dot(model.pt_x.mass, cond) + gamma)


def solve_quadratic_single(
    model: MarketModel, h: PayoffSurface, budget, u: UtilitySpec
) -> Tuple[HedgeCurve, SolveReport]:
    """Mean-variance hedge: ``f = E[h | X] + lambda pt_x / p_x + gamma``.

    ``lambda = 0`` when the unconstrained hedge is affordable, otherwise it is
    chosen so that the budget binds.
    """
    if u.kind != "quadratic":
        raise InvalidSpecError("solve_quadratic_single needs quadratic utility")
    c = _budget(budget)
    hv = _check_payoff(model, h)
    pt = model.pt_x.mass
    s = pt > 0
    cond, ratio = _conditional_mean_x(model, hv)
    threshold = float(np.dot(pt, cond)) + u.gamma
    lam = 0.0 if threshold <= c else (c - threshold) / float(np.dot(pt, ratio))
    f = np.where(s, cond + lam * ratio + u.gamma, 0.0)
    f = fill_off_support(model.axis_x, f, s)
    return HedgeCurve(model.axis_x, f), _report(model, h, f, u, lam)


def solve_single(model: MarketModel, h: PayoffSurface, budget, u: UtilitySpec):
    """Dispatch on the utility kind."""
    if u.kind == "exponential":
        return solve_exponential_single(model, h, budget, u)
    if u.kind == "quadratic":
        return solve_quadratic_single(model, h, budget, u)
    return solve_power_single(model, h, budget, u)


def complete_market_optimizer(
    p: MarginalDensity,
    pt: MarginalDensity,
    u: UtilitySpec,
    budget,
    h_x: Optional[HedgeCurve] = None,
    budget_tol: float = BUDGET_TOL,
) -> Tuple[HedgeCurve, SolveReport]:
    """Hedge of an ``X``-only claim: ``f = [U']^{-1}(-lambda pt / p) + h_x``."""
    if not u.increasing:
        raise InvalidSpecError("complete_market_optimizer needs a strictly increasing utility")
    if not p.axis.same_as(pt.axis):
        raise InvalidSpecError("densities live on different axes")
    s = p.mass > 0
    if np.any(s != (pt.mass > 0)):
        raise EquivalenceError("subjective and risk-neutral densities differ in support")
    c = _budget(budget)
    hx = np.zeros(len(p.axis)) if h_x is None else np.asarray(h_x.values, dtype=float)
    ratio = pt.mass[s] / p.mass[s]
    w = pt.mass[s]

    def hedge(t):
        return u.inverse_marginal(math.exp(t) * ratio) + hx[s]

    if u.kind != "exponential" and not c > float(np.dot(w, hx[s])):
        raise InfeasibleBudgetError("budget does not exceed the risk-neutral value of the claim")
    t = _bisect_log_multiplier(lambda t: float(np.dot(w, hedge(t))), c, budget_tol)
    lam = -math.exp(t)
    f = np.zeros(len(p.axis))
    f[s] = hedge(t)
    f = fill_off_support(p.axis, f, s)
    d = f[s] - hx[s]
    foc = np.max(np.abs(p.mass[s] * u.marginal(d) + lam * w)) / max(1.0, abs(lam))
    report = SolveReport(
        lambda_star=lam,
        budget_used=float(np.dot(pt.mass, f)),
        foc_residual_sup=float(foc),
        expected_utility=float(np.dot(p.mass[s], u.value(d))),
    )
    return HedgeCurve(p.axis, f), report


def hhat(model: MarketModel, h: PayoffSurface, i: int, f: float, gamma: float) -> float:
    """``sum_y P(x_i, y) (f - h(x_i, y))^(-gamma)`` over positive-mass cells."""
    P = model.mass[i]
    m = P > 0
    d = f - _check_payoff(model, h)[i][m]
    if np.any(d <= 0):
        raise UtilityDomainError("f must exceed the payoff on the support")
    return float(np.dot(P[m], d ** (-gamma)))


def hhat_transform(model: MarketModel, h: PayoffSurface, i: int, f: float, gamma: float) -> float:
    """The same quantity through its integral transform in ``z``.

    ``(1 / (gamma Gamma(gamma))) int_0^inf exp(-z^(1/gamma) f) H(x, z) dz`` with
    ``H(x, z) = sum_y P exp(z^(1/gamma) h)``.  The quadrature runs in
    ``r = z^(1/gamma)``, which turns the integral into
    ``(1 / Gamma(gamma)) int_0^inf r^(gamma-1) exp(-r f) H dr``; the ``r^(gamma-1)``
    endpoint factor is handled as an algebraic weight and the range is split
    at each cell's decay scale ``1 / (f - h)``.
    """
    P = model.mass[i]
    m = P > 0
    p = P[m]
    hv = _check_payoff(model, h)[i][m]
    d = f - hv
    if np.any(d <= 0):
        raise UtilityDomainError("f must exceed the payoff on the support")

    def kernel(r):
        # exp(-r f) * H(x, r^gamma), one exponent per cell
        return float(np.dot(p, np.exp(-r * d)))

    opts = dict(epsabs=0.0, epsrel=1e-13, limit=500)
    breaks = np.unique(np.concatenate([1.0 / d, 8.0 / d]))
    total, _ = integrate.quad(kernel, 0.0, breaks[0], weight="alg", wvar=(gamma - 1.0, 0.0), **opts)
    for a, b in zip(breaks[:-1], breaks[1:]):
        total += integrate.quad(lambda r: r ** (gamma - 1.0) * kernel(r), a, b, **opts)[0]
    total += integrate.quad(lambda r: r ** (gamma - 1.0) * kernel(r), breaks[-1], np.inf, **opts)[0]
    return total / gamma_fn(gamma)

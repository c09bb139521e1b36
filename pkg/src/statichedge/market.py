"""Discretized subjective and risk-neutral laws on rectangular grids.

Every density in this module is stored as *cell probabilities*: entry ``i``
of an axis carries the probability of the cell around ``points[i]``.  Cell
edges sit halfway between neighbouring points, and the outer edges sit half a
spacing beyond the end points.  Expectations are therefore plain mass-weighted
sums.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.special import ndtr

from .errors import (
    ConditioningError,
    EquivalenceError,
    InsufficientDataError,
    InvalidAxisError,
    InvalidSpecError,
)

__all__ = [
    "GridAxis",
    "JointDensityGrid",
    "MarginalDensity",
    "MarketModel",
    "BivariateNormalSpec",
    "LetfMixtureSpec",
    "discretize_bivariate_normal",
    "letf_marginals",
    "letf_joint",
    "conditional_given_x",
    "conditional_given_y",
    "rn_product_coupling",
    "implied_density_from_calls",
]

# Mass read from files may be off by this much before it is rejected.
INPUT_MASS_TOL = 1e-6
# Total mass after normalization.
MASS_TOL = 1e-12
# Clipped (negative) implied mass tolerated before flagging the quotes.
CLIP_TOL = 1e-3

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class GridAxis:
    """Strictly increasing grid coordinates for one risk factor."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).ravel()
        if pts.size < 2:
            raise InvalidAxisError("a grid axis needs at least 2 points")
        if not np.all(np.isfinite(pts)):
            raise InvalidAxisError("grid axis contains NaN or Inf")
        if np.any(np.diff(pts) <= 0):
            raise InvalidAxisError("grid axis must be strictly increasing")
        object.__setattr__(self, "points", _readonly(pts))

    @classmethod
    def from_cells(cls, lo: float, hi: float, step: float) -> "GridAxis":
        """Axis of cell midpoints for the partition of ``[lo, hi]`` into cells of width ``step``."""
        if not (step > 0 and hi > lo):
            raise InvalidAxisError("need hi > lo and step > 0")
        n = max(1, int(round((hi - lo) / step)))
        edges = np.linspace(lo, hi, n + 1)
        if n == 1:
            raise InvalidAxisError("step must be smaller than the interval width")
        return cls(0.5 * (edges[1:] + edges[:-1]))

    def __len__(self) -> int:
        return self.points.size

    @property
    def spacings(self) -> np.ndarray:
        return np.diff(self.points)

    @property
    def uniform(self) -> bool:
        d = self.spacings
        return bool(np.allclose(d, d[0], rtol=1e-9, atol=0.0))

    @property
    def step(self) -> Optional[float]:
        return float(np.mean(self.spacings)) if self.uniform else None

    @property
    def edges(self) -> np.ndarray:
        p = self.points
        d = np.diff(p)
        mid = 0.5 * (p[1:] + p[:-1])
        return np.concatenate(([p[0] - 0.5 * d[0]], mid, [p[-1] + 0.5 * d[-1]]))

    def same_as(self, other: "GridAxis") -> bool:
        return len(self) == len(other) and bool(np.array_equal(self.points, other.points))


def _normalized_mass(mass, shape, tol) -> np.ndarray:
    m = np.array(mass, dtype=float)
    if m.shape != shape:
        raise InvalidSpecError(f"mass has shape {m.shape}, axes imply {shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidSpecError("mass contains NaN or Inf")
    if np.any(m < 0):
        raise InvalidSpecError("mass contains negative entries")
    total = m.sum()
    if abs(total - 1.0) > tol:
        raise InvalidSpecError(f"total mass {total!r} differs from 1 by more than {tol:g}")
    return _readonly(m / total)


@dataclass(frozen=True, eq=False)
class MarginalDensity:
    axis: GridAxis
    mass: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "mass", _normalized_mass(self.mass, (len(self.axis),), INPUT_MASS_TOL))

    @classmethod
    def from_unnormalized(cls, axis: GridAxis, raw, **meta) -> "MarginalDensity":
        raw = np.asarray(raw, dtype=float)
        total = raw.sum()
        if not total > 0:
            raise InvalidSpecError("marginal has no mass on the grid")
        meta.setdefault("truncation_deficit", float(1.0 - total))
        return cls(axis, raw / total, meta)

    @property
    def support(self) -> np.ndarray:
        return self.mass > 0

    def expect(self, values) -> float:
        return float(np.dot(self.mass, values))


@dataclass(frozen=True, eq=False)
class JointDensityGrid:
    """Cell probabilities ``mass[i, j]`` on ``axis_x`` by ``axis_y``."""

    axis_x: GridAxis
    axis_y: GridAxis
    mass: np.ndarray
    truncation_deficit: float = 0.0

    def __post_init__(self):
        shape = (len(self.axis_x), len(self.axis_y))
        object.__setattr__(self, "mass", _normalized_mass(self.mass, shape, INPUT_MASS_TOL))

    @classmethod
    def from_unnormalized(cls, axis_x, axis_y, raw) -> "JointDensityGrid":
        raw = np.asarray(raw, dtype=float)
        total = raw.sum()
        if not total > 0:
            raise InvalidSpecError("joint law has no mass on the grid")
        return cls(axis_x, axis_y, raw / total, float(1.0 - total))

    def marginal_x(self) -> MarginalDensity:
        return MarginalDensity(self.axis_x, self.mass.sum(axis=1))

    def marginal_y(self) -> MarginalDensity:
        return MarginalDensity(self.axis_y, self.mass.sum(axis=0))

    def transpose(self) -> "JointDensityGrid":
        return JointDensityGrid(self.axis_y, self.axis_x, self.mass.T, self.truncation_deficit)


@dataclass(frozen=True, eq=False)
class MarketModel:
    """Subjective joint law plus the two risk-neutral marginals.

    The risk-neutral marginals must charge exactly the same grid points as the
    marginals of the subjective joint law (the two measures are equivalent).
    """

    p_joint: JointDensityGrid
    pt_x: MarginalDensity
    pt_y: MarginalDensity

    def __post_init__(self):
        if not self.pt_x.axis.same_as(self.p_joint.axis_x):
            raise InvalidSpecError("risk-neutral x marginal lives on a different axis")
        if not self.pt_y.axis.same_as(self.p_joint.axis_y):
            raise InvalidSpecError("risk-neutral y marginal lives on a different axis")
        for name, p, pt in (("x", self.p_x, self.pt_x.mass), ("y", self.p_y, self.pt_y.mass)):
            bad = np.flatnonzero((p > 0) != (pt > 0))
            if bad.size:
                raise EquivalenceError(
                    f"subjective and risk-neutral {name}-marginals differ in support at indices {bad.tolist()}"
                )

    @classmethod
    def from_joint(cls, joint: JointDensityGrid) -> "MarketModel":
        """Model whose risk-neutral marginals coincide with the subjective ones."""
        return cls(joint, joint.marginal_x(), joint.marginal_y())

    @property
    def axis_x(self) -> GridAxis:
        return self.p_joint.axis_x

    @property
    def axis_y(self) -> GridAxis:
        return self.p_joint.axis_y

    @property
    def mass(self) -> np.ndarray:
        return self.p_joint.mass

    @property
    def p_x(self) -> np.ndarray:
        return self.p_joint.mass.sum(axis=1)

    @property
    def p_y(self) -> np.ndarray:
        return self.p_joint.mass.sum(axis=0)

    @property
    def equivalence_mask(self) -> np.ndarray:
        return self.p_joint.mass > 0

    @property
    def shape(self) -> Tuple[int, int]:
        return self.p_joint.mass.shape

    def transpose(self) -> "MarketModel":
        return MarketModel(self.p_joint.transpose(), self.pt_y, self.pt_x)


@dataclass(frozen=True, eq=False)
class BivariateNormalSpec:
    mu: np.ndarray
    sigma: np.ndarray
    rho: Optional[float] = None

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        sigma = np.array(self.sigma, dtype=float)
        if mu.shape != (2,) or sigma.shape != (2, 2):
            raise InvalidSpecError("need a 2-vector mean and a 2x2 covariance")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise InvalidSpecError("non-finite parameters")
        if not np.allclose(sigma, sigma.T, rtol=0, atol=1e-14):
            raise InvalidSpecError("covariance is not symmetric")
        if np.linalg.eigvalsh(sigma).min() < -1e-12 or np.any(np.diag(sigma) <= 0):
            raise InvalidSpecError("covariance is not positive semidefinite with positive variances")
        corr = sigma[0, 1] / math.sqrt(sigma[0, 0] * sigma[1, 1])
        rho = corr if self.rho is None else float(self.rho)
        if abs(rho) > 1 or abs(rho - corr) > 1e-10:
            raise InvalidSpecError(f"rho={rho} inconsistent with covariance (correlation {corr})")
        object.__setattr__(self, "mu", _readonly(mu))
        object.__setattr__(self, "sigma", _readonly(sigma))
        object.__setattr__(self, "rho", float(np.clip(rho, -1.0, 1.0)))

    @classmethod
    def from_correlation(cls, mu, std, rho: float) -> "BivariateNormalSpec":
        sx, sy = (float(s) for s in std)
        cov = rho * sx * sy
        return cls(mu, [[sx * sx, cov], [cov, sy * sy]], rho)

    def transposed(self) -> "BivariateNormalSpec":
        return BivariateNormalSpec(self.mu[::-1], self.sigma[::-1, ::-1], self.rho)


@dataclass(frozen=True)
class LetfMixtureSpec:
    """Terminal law of the log-ETF ``X`` and its realized variance ``Y``.

    ``Y`` is exponential with rate ``lambda_p`` (subjective) or ``nu_q``
    (risk-neutral); given ``Y = y`` the log-price is normal with variance ``y``
    and mean ``mu*T - y/2`` (risk-neutral mean ``-y/2``).
    """

    lambda_p: float
    nu_q: float
    mu: float = 0.0
    T: float = 1.0
    beta: float = 2.0

    def __post_init__(self):
        for name in ("lambda_p", "nu_q", "T"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidSpecError(f"{name} must be positive, got {v}")
        if not (math.isfinite(self.mu) and math.isfinite(self.beta)):
            raise InvalidSpecError("mu and beta must be finite")

    def leg(self, risk_neutral: bool) -> Tuple[float, float]:
        """(exponential rate of Y, drift term mu*T) under the chosen measure."""
        return (self.nu_q, 0.0) if risk_neutral else (self.lambda_p, self.mu * self.T)

    def log_letf(self, x, y):
        """Log-value of the leveraged fund given log-ETF ``x`` and realized variance ``y``."""
        b = self.beta
        return b * np.asarray(x) - 0.5 * b * (b - 1.0) * np.asarray(y)


def _panel_nodes(lo: float, hi: float, panels: int):
    e = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(e)
    mid = 0.5 * (e[1:] + e[:-1])
    nodes = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    weights = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return nodes, weights


def discretize_bivariate_normal(spec: BivariateNormalSpec, half_width: float, step: float) -> JointDensityGrid:
    """Rectangle probabilities of a bivariate normal on ``[-half_width, half_width]^2``.

    Cell ``(i, j)`` receives ``P(X in [x_i, x_i+step), Y in [y_j, y_j+step))``
    computed by Gauss-Legendre quadrature in ``x`` of the exact conditional
    normal CDF in ``y``.  Axis points are cell midpoints.  Mass lost outside the
    square is renormalized away and recorded as ``truncation_deficit``.
    """
    if not (half_width > 0 and step > 0 and step < 2 * half_width):
        raise InvalidSpecError("need half_width > 0 and 0 < step < 2*half_width")
    axis = GridAxis.from_cells(-half_width, half_width, step)
    edges = axis.edges
    mx, my = spec.mu
    sx, sy = math.sqrt(spec.sigma[0, 0]), math.sqrt(spec.sigma[1, 1])
    rho = spec.rho
    cond_sd = sy * math.sqrt(max(0.0, 1.0 - rho * rho))
    n = len(axis)
    raw = np.empty((n, n))
    if cond_sd < 1e-12 * sy:
        # Y is an affine function of X; integrate the X-law over preimages.
        slope = rho * sy / sx
        for i in range(n):
            a, b = edges[i], edges[i + 1]
            ya, yb = sorted((my + slope * (a - mx), my + slope * (b - mx)))
            for j in range(n):
                lo, hi = max(ya, edges[j]), min(yb, edges[j + 1])
                if hi <= lo:
                    raw[i, j] = 0.0
                    continue
                xa, xb = sorted((mx + (lo - my) / slope, mx + (hi - my) / slope))
                raw[i, j] = ndtr((xb - mx) / sx) - ndtr((xa - mx) / sx)
        return JointDensityGrid.from_unnormalized(axis, axis, raw)

    # Panels per cell keep the conditional CDF well resolved for strong correlation.
    panels = int(min(64, max(1, math.ceil(abs(rho) * sy / sx * (edges[1] - edges[0]) / cond_sd))))
    for i in range(n):
        xs, w = _panel_nodes(edges[i], edges[i + 1], panels)
        dens = np.exp(-0.5 * ((xs - mx) / sx) ** 2) / (sx * math.sqrt(2 * math.pi))
        cm = my + rho * sy / sx * (xs - mx)
        cdf = ndtr((edges[None, :] - cm[:, None]) / cond_sd)
        raw[i] = (w * dens) @ np.diff(cdf, axis=1)
    return JointDensityGrid.from_unnormalized(axis, axis, raw)


def _letf_marginal_cdf(u, rate: float):
    """CDF of the asymmetric Laplace law of ``X - mu*T``."""
    u = np.asarray(u, dtype=float)
    k = 2.0 * rate / math.sqrt(8.0 * rate + 1.0)
    a = 0.5 * math.sqrt(8.0 * rate + 1.0)
    left = k / (a - 0.5) * np.exp((a - 0.5) * np.minimum(u, 0.0))
    right = 1.0 - k / (a + 0.5) * np.exp(-(a + 0.5) * np.maximum(u, 0.0))
    return np.where(u <= 0, left, right)


def letf_marginal_density(spec: LetfMixtureSpec, x, risk_neutral: bool = False):
    """Closed-form density of the log-ETF at ``x``."""
    rate, drift = spec.leg(risk_neutral)
    u = np.asarray(x, dtype=float) - drift
    s = math.sqrt(8.0 * rate + 1.0)
    return 2.0 * rate / s * np.exp(-0.5 * np.abs(u) * s - 0.5 * u)


def letf_marginals(spec: LetfMixtureSpec, axis: GridAxis) -> Tuple[MarginalDensity, MarginalDensity]:
    """Subjective and risk-neutral cell masses of the log-ETF on ``axis``."""
    out = []
    for rn in (False, True):
        rate, drift = spec.leg(rn)
        cdf = _letf_marginal_cdf(axis.edges - drift, rate)
        out.append(MarginalDensity.from_unnormalized(axis, np.diff(cdf)))
    return out[0], out[1]


def _y_edges_positive(axis_y: GridAxis) -> np.ndarray:
    if axis_y.points[0] <= 0:
        raise InvalidAxisError("variance axis must be strictly positive")
    e = axis_y.edges.copy()
    e[0] = 0.0
    return e


def letf_joint(
    spec: LetfMixtureSpec, axis_x: GridAxis, axis_y: GridAxis, risk_neutral: bool = False
) -> JointDensityGrid:
    """Cell masses of ``(X_T, Y_T)``; the lowest variance cell extends down to 0.

    The ``x``-integral is exact (normal CDF); the ``y``-integral uses composite
    Gauss-Legendre in ``t = sqrt(y)``, geometrically graded towards ``y = 0``
    where the conditional law collapses.
    """
    rate, drift = spec.leg(risk_neutral)
    ye = _y_edges_positive(axis_y)
    xe = axis_x.edges
    raw = np.empty((len(axis_x), len(axis_y)))
    for j in range(len(axis_y)):
        t_lo, t_hi = math.sqrt(ye[j]), math.sqrt(ye[j + 1])
        if t_lo == 0.0:
            cuts = np.concatenate(([0.0], t_hi * 2.0 ** -np.arange(40, -1, -1)))
            parts = [_panel_nodes(a, b, 1) for a, b in zip(cuts[:-1], cuts[1:])]
            t = np.concatenate([p[0] for p in parts])
            w = np.concatenate([p[1] for p in parts])
        else:
            t, w = _panel_nodes(t_lo, t_hi, 4)
        y = t * t
        weight = w * 2.0 * t * rate * np.exp(-rate * y)
        cdf = ndtr((xe[:, None] - drift) / t[None, :] + 0.5 * t[None, :])
        raw[:, j] = np.diff(cdf, axis=0) @ weight
    return JointDensityGrid.from_unnormalized(axis_x, axis_y, raw)


def conditional_given_x(model: MarketModel, i: int) -> np.ndarray:
    """Probabilities over the y-axis given the x-cell ``i``."""
    row = model.mass[i]
    total = row.sum()
    if not total > 0:
        raise ConditioningError(f"x-cell {i} has zero subjective probability")
    return row / total


def conditional_given_y(model: MarketModel, j: int) -> np.ndarray:
    col = model.mass[:, j]
    total = col.sum()
    if not total > 0:
        raise ConditioningError(f"y-cell {j} has zero subjective probability")
    return col / total


def rn_product_coupling(model: MarketModel) -> JointDensityGrid:
    """Joint law with the risk-neutral marginals and independent coordinates."""
    return JointDensityGrid(model.axis_x, model.axis_y, np.outer(model.pt_x.mass, model.pt_y.mass))


def implied_density_from_calls(strikes, call_prices) -> MarginalDensity:
    """Risk-neutral cell masses from the convexity of the call price curve.

    The mass at an interior strike is the jump in the slope of the piecewise
    linear call curve there, i.e. the second difference times the local cell
    width.  Negative masses are clipped; if the clipped total reaches
    ``CLIP_TOL`` of the positive mass the result carries
    ``meta["non_convex_quotes"] = True`` and a warning is issued.
    """
    k = np.asarray(strikes, dtype=float)
    c = np.asarray(call_prices, dtype=float)
    if k.ndim != 1 or k.shape != c.shape:
        raise InsufficientDataError("strikes and prices must be 1-d sequences of equal length")
    if k.size < 4:
        raise InsufficientDataError(f"need at least 4 strikes, got {k.size}")
    if not (np.all(np.isfinite(k)) and np.all(np.isfinite(c))):
        raise InvalidSpecError("quotes contain NaN or Inf")
    if np.any(np.diff(k) <= 0):
        raise InvalidAxisError("strikes must be strictly increasing")
    slopes = np.diff(c) / np.diff(k)
    raw = np.diff(slopes)
    width = 0.5 * (k[2:] - k[:-2])
    positive = raw[raw > 0].sum()
    clipped = -raw[raw < 0].sum()
    if not positive > 0:
        raise InvalidSpecError("call quotes imply no positive mass")
    bad = clipped >= CLIP_TOL * positive
    if bad:
        warnings.warn(f"non-convex call quotes: clipped mass {clipped:.3g}", RuntimeWarning, stacklevel=2)
    meta = {
        "raw_mass": float(raw.sum()),
        "clipped_mass": float(clipped),
        "density": raw / width,
        "non_convex_quotes": bool(bad),
    }
    return MarginalDensity(GridAxis(k[1:-1]), np.clip(raw, 0.0, None) / positive, meta)

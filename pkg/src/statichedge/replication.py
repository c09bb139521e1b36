"""Cash, forward and put/call strips that reproduce a hedge curve at maturity."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import InvalidSpecError
from .market import GridAxis, MarginalDensity
from .single import HedgeCurve

__all__ = ["ReplicationPortfolio", "decompose", "reconstruct", "default_kappa"]


@dataclass(frozen=True, eq=False)
class ReplicationPortfolio:
    kappa: float
    cash: float
    forward_units: float
    put_strikes: np.ndarray
    put_weights: np.ndarray
    call_strikes: np.ndarray
    call_weights: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("put_strikes", "put_weights", "call_strikes", "call_weights"):
            v = np.array(getattr(self, name), dtype=float).ravel()
            if not np.all(np.isfinite(v)):
                raise InvalidSpecError(f"{name} contains NaN or Inf")
            v.flags.writeable = False
            object.__setattr__(self, name, v)
        if self.put_strikes.shape != self.put_weights.shape or self.call_strikes.shape != self.call_weights.shape:
            raise InvalidSpecError("strike and weight sequences differ in length")
        for name in ("put_strikes", "call_strikes"):
            if np.any(np.diff(getattr(self, name)) <= 0):
                raise InvalidSpecError(f"{name} must be strictly increasing")

    def rows(self) -> List[Tuple[str, float, float]]:
        """``(type, strike, weight)`` rows; cash and forward rows carry ``kappa``."""
        out = [("cash", self.kappa, self.cash), ("forward", self.kappa, self.forward_units)]
        out += [("put", float(k), float(w)) for k, w in zip(self.put_strikes, self.put_weights)]
        out += [("call", float(k), float(w)) for k, w in zip(self.call_strikes, self.call_weights)]
        return out

    def scaled(self, s: float) -> "ReplicationPortfolio":
        return ReplicationPortfolio(
            self.kappa, s * self.cash, s * self.forward_units,
            self.put_strikes, s * self.put_weights, self.call_strikes, s * self.call_weights, dict(self.meta),
        )


def default_kappa(axis: GridAxis, pt: Optional[MarginalDensity] = None) -> float:
    """Grid point nearest the risk-neutral mean (axis midpoint without a density)."""
    pts = axis.points
    target = 0.5 * (pts[0] + pts[-1]) if pt is None else pt.expect(pts)
    return float(pts[np.argmin(np.abs(pts - target))])


def decompose(f: HedgeCurve, kappa: float) -> ReplicationPortfolio:
    """Split ``f`` into cash ``f(kappa)``, forwards ``f'(kappa)`` and option strips.

    The weight at an interior node is the jump in slope of the piecewise
    linear interpolant there (second difference times the local spacing).
    When ``kappa`` is a node its own kink is lumped half into a put and half
    into a call struck at ``kappa``, which pairs with the central-difference
    forward so that the portfolio reproduces the interpolant exactly.  The two
    end nodes get one-sided curvature estimates times half a spacing; they
    only matter outside the grid and are flagged in ``meta``.
    """
    x = f.axis.points
    v = f.values
    n = len(x)
    if n < 3:
        raise InvalidSpecError("replication needs at least 3 grid points")
    kappa = float(kappa)
    if not (x[0] <= kappa <= x[-1]):
        raise InvalidSpecError(f"kappa={kappa!r} outside the axis range [{x[0]!r}, {x[-1]!r}]")
    dx = np.diff(x)
    s = np.diff(v) / dx
    kinks = np.diff(s)  # at nodes 1..n-2
    e_lo = 2.0 * (s[1] - s[0]) / (x[2] - x[0]) * dx[0] / 2.0
    e_hi = 2.0 * (s[-1] - s[-2]) / (x[-1] - x[-3]) * dx[-1] / 2.0

    weights = np.concatenate([[e_lo], kinks, [e_hi]])
    hit = np.flatnonzero(np.isclose(x, kappa, rtol=0.0, atol=1e-12 * max(1.0, abs(kappa))))
    if hit.size:
        m = int(hit[0])
        kappa = float(x[m])
        cash = float(v[m])
        if m == 0:
            fwd = s[0]
        elif m == n - 1:
            fwd = s[-1]
        else:
            fwd = 0.5 * (s[m - 1] + s[m])
        put_idx = list(range(0, m))
        call_idx = list(range(m + 1, n))
        put_k = [x[i] for i in put_idx]
        put_w = [weights[i] for i in put_idx]
        call_k = [x[i] for i in call_idx]
        call_w = [weights[i] for i in call_idx]
        if m == 0:
            put_k.append(x[0])
            put_w.append(e_lo)
        elif m == n - 1:
            call_k.insert(0, x[-1])
            call_w.insert(0, e_hi)
        else:
            put_k.append(x[m])
            put_w.append(0.5 * weights[m])
            call_k.insert(0, x[m])
            call_w.insert(0, 0.5 * weights[m])
    else:
        m = int(np.searchsorted(x, kappa) - 1)
        fwd = s[m]
        cash = float(v[m] + s[m] * (kappa - x[m]))
        put_k, put_w = list(x[: m + 1]), list(weights[: m + 1])
        call_k, call_w = list(x[m + 1:]), list(weights[m + 1:])
    meta = {
        "one_sided_endpoints": True,
        "endpoint_strikes": (float(x[0]), float(x[-1])),
        "endpoint_weights": (float(e_lo), float(e_hi)),
    }
    return ReplicationPortfolio(kappa, cash, float(fwd), put_k, put_w, call_k, call_w, meta)


def reconstruct(port: ReplicationPortfolio, terminal):
    """Portfolio payoff at ``terminal`` (scalar or array); uses ``C(kappa) - P(kappa) = terminal - kappa``."""
    t = np.asarray(terminal, dtype=float)
    tt = t[..., None]
    out = port.cash + port.forward_units * (t - port.kappa)
    out = out + np.sum(port.put_weights * np.maximum(port.put_strikes - tt, 0.0), axis=-1)
    out = out + np.sum(port.call_weights * np.maximum(tt - port.call_strikes, 0.0), axis=-1)
    return float(out) if np.ndim(out) == 0 else out

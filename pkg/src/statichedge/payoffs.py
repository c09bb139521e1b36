"""Named payoff catalog used by the command-line front-end."""
from __future__ import annotations

from typing import Callable, Dict, Optional

import numpy as np

from .errors import InvalidSpecError
from .market import LetfMixtureSpec, MarketModel
from .single import PayoffSurface


def _zero(x, y):
    return np.zeros(np.broadcast(x, y).shape)


def basket_call(x, y):
    """``(exp(x + y) - 1)^+`` on log-returns."""
    return np.maximum(np.expm1(x + y), 0.0)


def product_call(x, y):
    """``(x y - 1)^+``."""
    return np.maximum(x * y - 1.0, 0.0)


def letf_linear(beta: float) -> Callable:
    """Log-value of a fund with leverage ``beta``: ``beta x - beta (beta - 1) y / 2``."""
    spec = LetfMixtureSpec(1.0, 1.0, beta=beta)
    return spec.log_letf


CATALOG = ("zero", "letf-linear", "basket-call", "product-call", "file")


def build_payoff(
    name: str, model: MarketModel, beta: float = 2.0, scale: float = 1.0, values: Optional[np.ndarray] = None
) -> PayoffSurface:
    fns: Dict[str, Callable] = {
        "zero": _zero,
        "letf-linear": letf_linear(beta),
        "basket-call": basket_call,
        "product-call": product_call,
    }
    if name == "file":
        if values is None:
            raise InvalidSpecError("payoff 'file' needs a payoff grid")
        h = PayoffSurface(model.axis_x, model.axis_y, values)
    elif name in fns:
        h = PayoffSurface.on(model, fns[name])
    else:
        raise InvalidSpecError(f"unknown payoff {name!r}; choose from {CATALOG}")
    return h if scale == 1.0 else h.scaled(scale)

"""Command-line front-end: ``statichedge <command> [--config FILE] [options]``.

Configuration is a flat ``key = value`` file (dotted keys, no sections);
command-line flags and ``--set key=value`` override it.  Exit status is 0 on
success, 2 when a solver did not converge (best-effort outputs are still
written) and 1 on invalid input.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import platform
import sys
from importlib import metadata, resources
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import scipy

from . import io
from .basket import SURPLUS_CHOICES, iterate_exponential_basket, solve_quadratic_basket
from .errors import AllocationUnboundedError, ConvergenceError, HedgeError, InvalidSpecError
from .indifference import price_exponential, verify_indifference
from .market import (
    BivariateNormalSpec,
    GridAxis,
    LetfMixtureSpec,
    MarketModel,
    discretize_bivariate_normal,
    letf_joint,
)
from .payoffs import CATALOG, build_payoff
from .replication import decompose, default_kappa
from .single import PayoffSurface, solve_single
from .utility import KINDS, UtilitySpec

COMMANDS = ("hedge-single", "hedge-basket", "replicate", "indiff-price", "discretize")
MODEL_SOURCES = ("three-state", "normal", "letf", "files")

DEFAULTS: Dict[str, str] = {
    "model.source": "three-state",
    "model.mu": "0.1,0.15",
    "model.std": "1,1.4142135623730951",
    "model.rho": "-0.1",
    "model.half_width": "4",
    "model.step": "0.25",
    "model.lambda": "100",
    "model.nu": "44.444444444444444",
    "model.letf_mu": "0.1",
    "model.T": "1",
    "model.beta": "2",
    "model.x_lo": "-1",
    "model.x_hi": "1",
    "model.x_step": "0.02",
    "model.y_hi": "0.3",
    "model.y_step": "0.005",
    "payoff.name": "product-call",
    "payoff.scale": "1",
    "payoff.beta": "2",
    "utility.kind": "exponential",
    "utility.gamma": "1",
    "budget": "0",
    "solver.tol": "1e-10",
    "solver.max_iter": "10000",
    "basket.surplus_to": "split",
    "indiff.nu": "1",
    "indiff.reference_budget": "0",
}


def _fixture(name: str) -> Path:
    return Path(str(resources.files("statichedge") / "fixtures" / name))


def _version(dist: str) -> str:
    try:
        return metadata.version(dist)
    except metadata.PackageNotFoundError:
        return "unknown"


def load_config(path: Optional[str]) -> Dict[str, str]:
    cfg = dict(DEFAULTS)
    if path is None:
        return cfg
    p = Path(path)
    if not p.is_file():
        raise io.InputFileError(str(p), 0, "config file not found")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + p.read_text(encoding="utf-8"), source=str(p))
    except configparser.Error as exc:
        line = getattr(exc, "lineno", 1) or 1
        raise io.InputFileError(str(p), max(int(line) - 1, 0), "malformed config entry") from None
    for k, v in parser["run"].items():
        cfg[k] = v
    for key in ("model.joint", "model.pt_x", "model.pt_y", "payoff.file", "replicate.curve"):
        if key in cfg and not Path(cfg[key]).is_absolute():
            cfg[key] = str(p.parent / cfg[key])
    return cfg


def _num(cfg: Dict[str, str], key: str) -> float:
    try:
        return float(cfg[key])
    except KeyError:
        raise InvalidSpecError(f"missing config key {key}") from None
    except ValueError:
        raise InvalidSpecError(f"config key {key} is not a number: {cfg[key]!r}") from None


def _vec(cfg: Dict[str, str], key: str) -> List[float]:
    try:
        return [float(t) for t in cfg[key].split(",")]
    except ValueError:
        raise InvalidSpecError(f"config key {key} must be comma-separated numbers") from None


def build_model(cfg: Dict[str, str]) -> MarketModel:
    source = cfg["model.source"]
    if source == "three-state":
        return MarketModel.from_joint(io.read_joint(_fixture("three_state_joint.csv")))
    if source == "normal":
        spec = BivariateNormalSpec.from_correlation(_vec(cfg, "model.mu"), _vec(cfg, "model.std"), _num(cfg, "model.rho"))
        return MarketModel.from_joint(discretize_bivariate_normal(spec, _num(cfg, "model.half_width"), _num(cfg, "model.step")))
    if source == "letf":
        spec = LetfMixtureSpec(
            _num(cfg, "model.lambda"), _num(cfg, "model.nu"), _num(cfg, "model.letf_mu"), _num(cfg, "model.T"), _num(cfg, "model.beta")
        )
        ax = GridAxis.from_cells(_num(cfg, "model.x_lo"), _num(cfg, "model.x_hi"), _num(cfg, "model.x_step"))
        ay = GridAxis.from_cells(0.0, _num(cfg, "model.y_hi"), _num(cfg, "model.y_step"))
        p = letf_joint(spec, ax, ay, risk_neutral=False)
        q = letf_joint(spec, ax, ay, risk_neutral=True)
        return MarketModel(p, q.marginal_x(), q.marginal_y())
    if source == "files":
        if "model.joint" not in cfg:
            raise InvalidSpecError("model.source=files needs model.joint")
        joint = io.read_joint(cfg["model.joint"])
        pt_x = io.read_marginal(cfg["model.pt_x"]) if "model.pt_x" in cfg else joint.marginal_x()
        pt_y = io.read_marginal(cfg["model.pt_y"]) if "model.pt_y" in cfg else joint.marginal_y()
        return MarketModel(joint, pt_x, pt_y)
    raise InvalidSpecError(f"unknown model.source {source!r}; choose from {MODEL_SOURCES}")


def build_payoff_surface(cfg: Dict[str, str], model: MarketModel) -> PayoffSurface:
    name = cfg["payoff.name"]
    values = None
    if name == "file":
        if "payoff.file" not in cfg:
            raise InvalidSpecError("payoff.name=file needs payoff.file")
        path = cfg["payoff.file"]
        ax, ay, values = io.read_payoff(path)
        if not (ax.same_as(model.axis_x) and ay.same_as(model.axis_y)):
            raise io.InputFileError(path, 0, "payoff grid does not match the model grid")
        name = "file"
    return build_payoff(name, model, beta=_num(cfg, "payoff.beta"), scale=_num(cfg, "payoff.scale"), values=values)


def _budget(cfg, model: MarketModel, h: PayoffSurface, basket: bool) -> float:
    raw = cfg["budget"].strip().lower()
    if raw != "fair":
        return _num(cfg, "budget")
    if basket:
        return float(model.pt_x.mass @ h.values @ model.pt_y.mass)
    px = np.where(model.p_x > 0, model.p_x, 1.0)
    return float(model.pt_x.mass @ ((model.mass * h.values).sum(axis=1) / px))


def _config_hash(cfg: Dict[str, str]) -> str:
    blob = "\n".join(f"{k}={cfg[k]}" for k in sorted(cfg))
    return hashlib.sha256(blob.encode()).hexdigest()


def _manifest(cfg, command: str, extra: Dict[str, object]) -> Dict[str, object]:
    m: Dict[str, object] = {
        "command": command,
        "config_sha256": _config_hash(cfg),
        "version.statichedge": _version("artifact"),
        "version.numpy": np.__version__,
        "version.scipy": scipy.__version__,
        "version.python": platform.python_version(),
    }
    m.update(extra)
    m.update({f"config.{k}": cfg[k] for k in sorted(cfg)})
    return m


def cmd_hedge_single(cfg, out: Path) -> int:
    model = build_model(cfg)
    h = build_payoff_surface(cfg, model)
    u = UtilitySpec(cfg["utility.kind"], _num(cfg, "utility.gamma"))
    c = _budget(cfg, model, h, basket=False)
    f, report = solve_single(model, h, c, u)
    info = dict(report.as_dict(), budget=c)
    io.write_curve(out / "hedge_f.csv", f, "f", "x", info)
    io.write_manifest(out / "manifest.txt", _manifest(cfg, "hedge-single", dict(info, converged=True)))
    return 0


def cmd_hedge_basket(cfg, out: Path) -> int:
    model = build_model(cfg)
    h = build_payoff_surface(cfg, model)
    u = UtilitySpec(cfg["utility.kind"], _num(cfg, "utility.gamma"))
    c = _budget(cfg, model, h, basket=True)
    tol = _num(cfg, "solver.tol")
    max_iter = int(_num(cfg, "solver.max_iter"))
    if u.kind == "exponential":
        surplus = cfg["basket.surplus_to"]
        if surplus not in SURPLUS_CHOICES:
            raise InvalidSpecError(f"basket.surplus_to must be one of {SURPLUS_CHOICES}")
        alloc = _num(cfg, "basket.allocation_f") if cfg.get("basket.allocation_f", "").strip() else None
        pair, rep = iterate_exponential_basket(model, h, c, u.gamma, tol, max_iter, surplus, alloc)
        info = dict(rep.as_dict(), budget=c, split_f=pair.split_f, split_g=pair.split_g)
        trace = [(i, r, e) for i, (r, e) in enumerate(zip(rep.l2_residuals, rep.expected_utilities))]
        io.atomic_write(out / "trace.csv", io.csv_text(("iter", "l2_residual", "expected_utility"), trace))
        converged = rep.converged
    elif u.kind == "quadratic":
        pair, rep = solve_quadratic_basket(model, h, c, u.gamma, tol, max_iter)
        info = dict(rep.as_dict(), budget=c, split_f=pair.split_f, split_g=pair.split_g)
        converged = rep.converged
    else:
        raise InvalidSpecError("basket hedges are available for exponential and quadratic utility only")
    io.write_curve(out / "hedge_f.csv", pair.f, "f", "x", info)
    io.write_curve(out / "hedge_g.csv", pair.g, "g", "y", info)
    io.write_manifest(out / "manifest.txt", _manifest(cfg, "hedge-basket", dict(info, tol=tol, max_iter=max_iter)))
    if not converged:
        print(f"warning: basket iteration did not converge in {max_iter} iterations", file=sys.stderr)
        return 2
    return 0


def cmd_replicate(cfg, out: Path) -> int:
    if "replicate.curve" not in cfg:
        raise InvalidSpecError("replicate needs a hedge curve (replicate.curve or --curve)")
    curve = io.read_curve(cfg["replicate.curve"])
    if cfg.get("replicate.kappa", "").strip():
        kappa = _num(cfg, "replicate.kappa")
    else:
        kappa = default_kappa(curve.axis)
    port = decompose(curve, kappa)
    io.atomic_write(out / "portfolio.csv", io.csv_text(("type", "strike", "weight"), port.rows()))
    print("note: end-of-grid option weights use one-sided curvature; tail replication is approximate", file=sys.stderr)
    io.write_manifest(
        out / "manifest.txt",
        _manifest(cfg, "replicate", {"kappa": port.kappa, "one_sided_endpoints": True, "converged": True}),
    )
    return 0


def cmd_indiff_price(cfg, out: Path) -> int:
    model = build_model(cfg)
    h = build_payoff_surface(cfg, model)
    gamma = _num(cfg, "utility.gamma")
    if cfg["utility.kind"] != "exponential":
        raise InvalidSpecError("indifference prices are available for exponential utility only")
    nu = _num(cfg, "indiff.nu")
    c_ref = _num(cfg, "indiff.reference_budget")
    q = price_exponential(model, h, gamma, nu)
    gap = verify_indifference(model, h, gamma, nu, q.price, c_ref)
    io.atomic_write(out / "quote.csv", io.csv_text(("nu", "gamma", "price", "verification_gap"), [(q.nu, q.gamma, q.price, gap)]))
    io.write_manifest(
        out / "manifest.txt",
        _manifest(cfg, "indiff-price", {"nu": q.nu, "price": q.price, "verification_gap": gap, "converged": True}),
    )
    return 0


def cmd_discretize(cfg, out: Path) -> int:
    model = build_model(cfg)
    io.write_joint(out / "joint.csv", model.p_joint)
    io.write_marginal(out / "pt_x.csv", model.pt_x)
    io.write_marginal(out / "pt_y.csv", model.pt_y)
    io.write_manifest(
        out / "manifest.txt",
        _manifest(cfg, "discretize", {"truncation_deficit": model.p_joint.truncation_deficit, "converged": True}),
    )
    return 0


HANDLERS = {
    "hedge-single": cmd_hedge_single,
    "hedge-basket": cmd_hedge_basket,
    "replicate": cmd_replicate,
    "indiff-price": cmd_indiff_price,
    "discretize": cmd_discretize,
}

FLAG_KEYS = {
    "gamma": "utility.gamma",
    "utility": "utility.kind",
    "budget": "budget",
    "tol": "solver.tol",
    "max_iter": "solver.max_iter",
    "surplus_to": "basket.surplus_to",
    "allocation_f": "basket.allocation_f",
    "model_source": "model.source",
    "payoff": "payoff.name",
    "payoff_scale": "payoff.scale",
    "nu": "indiff.nu",
    "curve": "replicate.curve",
    "kappa": "replicate.kappa",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="statichedge", description="Static hedging of claims on two risks.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--out-dir", default="out")
    p.add_argument("--seed", type=int, help="recorded in the manifest; the solvers are deterministic")
    p.add_argument("--threads", type=int, help="recorded in the manifest; computation is single-threaded")
    p.add_argument("--model-source", choices=MODEL_SOURCES)
    p.add_argument("--payoff", choices=CATALOG)
    p.add_argument("--payoff-scale")
    p.add_argument("--utility", choices=KINDS)
    p.add_argument("--gamma")
    p.add_argument("--budget", help="a number, or 'fair' for the risk-neutral value of the payoff")
    p.add_argument("--tol")
    p.add_argument("--max-iter")
    p.add_argument("--surplus-to", choices=SURPLUS_CHOICES)
    p.add_argument("--allocation-f", help="re-gauge the basket pair so that f costs this amount")
    p.add_argument("--nu")
    p.add_argument("--curve", help="x,f CSV to decompose (replicate)")
    p.add_argument("--kappa")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep or not key.strip():
                raise InvalidSpecError(f"--set expects KEY=VALUE, got {item!r}")
            cfg[key.strip()] = value.strip()
        for attr, key in FLAG_KEYS.items():
            v = getattr(args, attr)
            if v is not None:
                cfg[key] = str(v)
        if args.seed is not None:
            cfg["run.seed"] = str(args.seed)
        if args.threads is not None:
            cfg["run.threads"] = str(args.threads)
        return HANDLERS[args.command](cfg, Path(args.out_dir))
    except (ConvergenceError, AllocationUnboundedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (HedgeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""CSV readers and writers for grids, curves, traces and run manifests.

Readers accept a header row, ignore blank lines and ``#`` comments, and raise
:class:`InputFileError` with the offending line number.  Writers are atomic
(temporary file then rename), use LF line endings and 17 significant digits.
"""
from __future__ import annotations

import csv
import math
import os
import tempfile
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .errors import HedgeError, InputFileError
from .market import INPUT_MASS_TOL, GridAxis, JointDensityGrid, MarginalDensity
from .single import HedgeCurve


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _rows(path, columns: Sequence[str]) -> List[Tuple[int, List[float]]]:
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputFileError(str(path), 0, f"cannot open: {exc.strerror}") from exc
    out = []
    with fh:
        header = None
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            cells = [c.strip() for c in row]
            if header is None:
                header = [c.lower() for c in cells]
                if header != list(columns):
                    raise InputFileError(str(path), lineno, f"expected header {','.join(columns)}, got {','.join(cells)}")
                continue
            if len(cells) != len(columns):
                raise InputFileError(str(path), lineno, f"expected {len(columns)} fields, got {len(cells)}")
            try:
                vals = [float(c) for c in cells]
            except ValueError:
                raise InputFileError(str(path), lineno, f"non-numeric field in {','.join(cells)!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise InputFileError(str(path), lineno, "NaN or Inf is not allowed")
            out.append((lineno, vals))
    if header is None:
        raise InputFileError(str(path), 0, "file is empty")
    if not out:
        raise InputFileError(str(path), 0, "no data rows")
    return out


def _axis_from_column(path, rows, col: int) -> GridAxis:
    pts = [rows[0][1][col]]
    for lineno, vals in rows[1:]:
        if not vals[col] > pts[-1]:
            raise InputFileError(str(path), lineno, "axis values must be strictly increasing")
        pts.append(vals[col])
    try:
        return GridAxis(np.array(pts))
    except HedgeError as exc:
        raise InputFileError(str(path), rows[0][0], str(exc)) from None


def _check_total(path, total, lineno):
    if abs(total - 1.0) > INPUT_MASS_TOL:
        raise InputFileError(str(path), lineno, f"probabilities sum to {total!r}, not 1 within {INPUT_MASS_TOL:g}")


def _read_surface(path, columns) -> Tuple[GridAxis, GridAxis, np.ndarray]:
    """Grid-valued file in x-major order with the same y sequence for every x."""
    rows = _rows(path, columns)
    xs: List[float] = []
    ys: List[float] = []
    values: Dict[Tuple[int, int], float] = {}
    first_x_rows = []
    for lineno, (x, y, v) in rows:
        if not xs or x != xs[-1]:
            if xs and not x > xs[-1]:
                raise InputFileError(str(path), lineno, "x values must be strictly increasing (x-major order)")
            xs.append(x)
            col = 0
        else:
            col += 1
        if len(xs) == 1:
            if ys and not y > ys[-1]:
                raise InputFileError(str(path), lineno, "y values must be strictly increasing within each x")
            ys.append(y)
            first_x_rows.append(lineno)
        elif col >= len(ys) or y != ys[col]:
            raise InputFileError(str(path), lineno, "y sequence differs from the first x block (missing or duplicate cell)")
        values[(len(xs) - 1, col)] = v
        last = lineno
    if len(values) != len(xs) * len(ys):
        raise InputFileError(str(path), last, "incomplete grid: some (x, y) cells are missing")
    grid = np.array([[values[(i, j)] for j in range(len(ys))] for i in range(len(xs))])
    try:
        return GridAxis(np.array(xs)), GridAxis(np.array(ys)), grid
    except HedgeError as exc:
        raise InputFileError(str(path), rows[0][0], str(exc)) from None


def read_joint(path) -> JointDensityGrid:
    ax, ay, mass = _read_surface(path, ("x", "y", "mass"))
    if np.any(mass < 0):
        raise InputFileError(str(path), 0, "negative probability mass")
    _check_total(path, mass.sum(), 0)
    return JointDensityGrid(ax, ay, mass)


def read_marginal(path) -> MarginalDensity:
    rows = _rows(path, ("x", "mass"))
    ax = _axis_from_column(path, rows, 0)
    mass = np.array([v[1] for _, v in rows])
    for lineno, v in rows:
        if v[1] < 0:
            raise InputFileError(str(path), lineno, "negative probability mass")
    _check_total(path, mass.sum(), rows[-1][0])
    return MarginalDensity(ax, mass)


def read_calls(path) -> Tuple[np.ndarray, np.ndarray]:
    rows = _rows(path, ("strike", "price"))
    ax = _axis_from_column(path, rows, 0)
    return ax.points.copy(), np.array([v[1] for _, v in rows])


def read_payoff(path) -> Tuple[GridAxis, GridAxis, np.ndarray]:
    return _read_surface(path, ("x", "y", "h"))


def read_curve(path, column: str = "f", axis_name: str = "x") -> HedgeCurve:
    rows = _rows(path, (axis_name, column))
    ax = _axis_from_column(path, rows, 0)
    return HedgeCurve(ax, np.array([v[1] for _, v in rows]))


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: Sequence[str], rows: Iterable[Sequence], comments: Dict[str, object] = None) -> str:
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    if comments:
        lines += [f"# {k}={fmt(v)}" for k, v in comments.items()]
    return "\n".join(lines) + "\n"


def write_curve(path, curve: HedgeCurve, column: str = "f", axis_name: str = "x", report: Dict[str, object] = None):
    atomic_write(path, csv_text((axis_name, column), zip(curve.axis.points, curve.values), report))


def write_joint(path, joint: JointDensityGrid):
    rows = [
        (x, y, joint.mass[i, j])
        for i, x in enumerate(joint.axis_x.points)
        for j, y in enumerate(joint.axis_y.points)
    ]
    atomic_write(path, csv_text(("x", "y", "mass"), rows))


def write_marginal(path, m: MarginalDensity):
    atomic_write(path, csv_text(("x", "mass"), zip(m.axis.points, m.mass)))


def write_manifest(path, entries: Dict[str, object]) -> None:
    atomic_write(path, "".join(f"{k}={fmt(v)}\n" for k, v in entries.items()))


def read_manifest(path) -> Dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line and not line.startswith("#"):
            k, _, v = line.partition("=")
            out[k] = v
    return out

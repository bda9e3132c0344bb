"""Maximum MasterFace effectiveness: fitted coverage over fitted capacity."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .model_fit import FitParams, coverage_raw, log_capacity

# decision distance <-> false match rate used for the high-dimensional analysis
FMR_PRESET = {1.12: "1e-4", 1.18: "1e-3", 1.25: "1e-2"}
PRESETS = {"paper-fmr": FMR_PRESET}

FLAG_CLAMPED = "coverage clamped to 0 (model out of range)"
FLAG_IMPLAUSIBLE = "implausible (eta > 1)"
FLAG_CAPACITY = "model out of range (capacity not positive/finite)"


class ModelOutOfRangeError(ValueError):
    pass


@dataclass
class EffectivenessCell:
    dim: int
    radius: float
    capacity: float
    coverage: float
    eta: float
    log_capacity: float
    fmr_label: str | None = None
    flags: list = field(default_factory=list)


def _check(params: FitParams):
    if params.capacity is None or params.coverage is None:
        raise ValueError("effectiveness needs both capacity and coverage parameters")


def evaluate_cell(params: FitParams, r: float, d: float) -> EffectivenessCell:
    _check(params)
    log_cap = float(log_capacity(params, r, d))
    cap = math.exp(log_cap) if log_cap < 709.0 else math.inf
    raw = float(coverage_raw(params, r, d))
    flags = []
    cov = raw
    if raw < 0.0:
        cov = 0.0
        flags.append(FLAG_CLAMPED)
    if not (cap > 0.0) or not math.isfinite(log_cap):
        flags.append(FLAG_CAPACITY)
        eta = math.nan
    else:
        # ratio through logs so huge capacities do not overflow
        eta = 0.0 if cov == 0.0 else math.exp(math.log(cov) - log_cap)
        if eta > 1.0:
            flags.append(FLAG_IMPLAUSIBLE)
    return EffectivenessCell(int(d), float(r), cap, cov, eta, log_cap,
                             FMR_PRESET.get(round(float(r), 6)), flags)


def effectiveness(params: FitParams, r: float, d: float) -> float:
    """``Nbar(r, d) / N(r, d)`` from the two fitted models.

    Raises
    ------
    ModelOutOfRangeError
        If the capacity model does not evaluate to a positive finite value.
    """
    cell = evaluate_cell(params, r, d)
    if FLAG_CAPACITY in cell.flags:
        raise ModelOutOfRangeError(f"model out of range: capacity at r={r}, d={d} is {cell.capacity}")
    return cell.eta


@dataclass
class EffectivenessGrid:
    dims: list
    radii: list
    capacity: np.ndarray
    coverage: np.ndarray
    eta: np.ndarray
    cells: list

    def rows(self) -> list[dict]:
        return [
            {
                "d": c.dim,
                "r": c.radius,
                "fmr_label": c.fmr_label or "",
                "capacity": c.capacity,
                "coverage": c.coverage,
                "eta": c.eta,
                "flags": ";".join(c.flags),
            }
            for c in self.cells
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["d", "r", "fmr_label", "capacity", "coverage", "eta", "flags"]
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return buf.getvalue()

    def to_json(self) -> str:
        rows = []
        for row in self.rows():
            row = dict(row)
            row["flags"] = row["flags"].split(";") if row["flags"] else []
            row["fmr_label"] = row["fmr_label"] or None
            for k in ("capacity", "coverage", "eta"):
                if not math.isfinite(row[k]):
                    row[k] = str(row[k])
            rows.append(row)
        return json.dumps({"kind": "effectiveness", "rows": rows}, indent=2)


def effectiveness_grid(params: FitParams, dims, radii) -> EffectivenessGrid:
    """Evaluate every ``(d, r)`` cell in long format (dimension-major)."""
    dims = list(dims)
    radii = list(radii)
    if not dims or not radii:
        raise ValueError("dims and radii must be nonempty")
    cells = [evaluate_cell(params, r, d) for d in dims for r in radii]
    shape = (len(dims), len(radii))
    cap = np.array([c.capacity for c in cells]).reshape(shape)
    cov = np.array([c.coverage for c in cells]).reshape(shape)
    eta = np.array([c.eta for c in cells]).reshape(shape)
    return EffectivenessGrid(dims, radii, cap, cov, eta, cells)


def effectiveness_from_counts(capacity, coverage) -> np.ndarray:
    """Elementwise ``coverage / capacity`` for tabulated counts.

    Negative coverage entries are clamped to 0 before dividing.
    """
    capacity = np.asarray(capacity, dtype=np.float64)
    coverage = np.maximum(np.asarray(coverage, dtype=np.float64), 0.0)
    if np.any(~(capacity > 0.0)) or not np.all(np.isfinite(capacity)):
        raise ModelOutOfRangeError("model out of range: capacity must be positive and finite")
    return coverage / capacity

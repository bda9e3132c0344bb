"""Two-stage fits of the capacity and coverage functions.

Capacity::

    N(r, d) = exp(A(d) + r B(d)),      A(d) = alpha d + beta,   B(d) = gamma d + delta
            = exp(d (alpha + gamma r) + beta + delta r)

Coverage::

    Nbar(r, d) = Abar(d) s(r) + Bbar(d),   s(r) = sigmoid(phi (r**eps - 1))
    Abar(d) = alpha_bar d^3 + beta_bar,    Bbar(d) = gamma_bar d^3 + delta_bar

Stage one fits ``(A, B)`` per dimension, stage two fits the dimension trends.
Both stages are linear least squares; ``phi`` and ``eps`` are fixed.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

PHI = 10000.0
EPSILON = 0.0005


class UnderdeterminedFitError(ValueError):
    pass


class SweepSchemaError(ValueError):
    pass


@dataclass(frozen=True)
class CapacityParams:
    alpha: float
    beta: float
    gamma: float
    delta: float


@dataclass(frozen=True)
class CoverageParams:
    alpha_bar: float
    beta_bar: float
    gamma_bar: float
    delta_bar: float


@dataclass(frozen=True)
class FitParams:
    capacity: CapacityParams | None = None
    coverage: CoverageParams | None = None
    phi: float = PHI
    epsilon: float = EPSILON

    def to_dict(self) -> dict:
        return {
            "capacity": None if self.capacity is None else asdict(self.capacity),
            "coverage": None if self.coverage is None else asdict(self.coverage),
            "fixed": {"phi": self.phi, "epsilon": self.epsilon},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FitParams":
        fixed = data.get("fixed", {})
        cap = data.get("capacity")
        cov = data.get("coverage")
        return cls(
            capacity=None if cap is None else CapacityParams(**cap),
            coverage=None if cov is None else CoverageParams(**cov),
            phi=float(fixed.get("phi", PHI)),
            epsilon=float(fixed.get("epsilon", EPSILON)),
        )


# Published parameter values (capacity and coverage rows).
PUBLISHED_PARAMS = FitParams(
    capacity=CapacityParams(alpha=0.993, beta=3.701, gamma=-0.436, delta=-3.706),
    coverage=CoverageParams(alpha_bar=-0.172, beta_bar=8.258, gamma_bar=0.153, delta_bar=0.315),
)


@dataclass
class PerDimParams:
    dim: int
    A: float
    B: float
    residual: float
    n_points: int


@dataclass
class FitReport:
    model: str
    params: FitParams
    per_dim: list[PerDimParams]
    excluded: list[dict] = field(default_factory=list)
    stage2_residuals: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": self.params.to_dict(),
            "per_dim": [asdict(p) for p in self.per_dim],
            "excluded": self.excluded,
            "stage2_residuals": self.stage2_residuals,
        }


def coverage_regressor(r, phi: float = PHI, epsilon: float = EPSILON):
    """The sigmoid factor ``s(r)``; exactly 0.5 at ``r = 1``."""
    r = np.asarray(r, dtype=np.float64)
    return expit(phi * np.expm1(epsilon * np.log(r)))


def _lstsq(design, target):
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    resid = target - design @ coef
    return coef, float(np.sqrt(np.mean(resid**2)))


def _check_stage1(radii, values, name):
    radii = np.asarray(radii, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if radii.shape != values.shape:
        raise ValueError("radii and values must have the same length")
    if np.unique(radii).size < 3:
        raise UnderdeterminedFitError(f"underdetermined stage-1 fit: {name} needs >= 3 distinct r values")
    return radii, values


def fit_capacity_stage1(radii, counts, dim: int = 0) -> PerDimParams:
    """Fit ``ln N = A + r B`` for one dimension."""
    radii, counts = _check_stage1(radii, counts, "capacity")
    if not np.all(counts > 0):
        raise ValueError("capacity counts must be positive for the log-linear fit")
    design = np.column_stack([np.ones_like(radii), radii])
    (a, b), rms = _lstsq(design, np.log(counts))
    return PerDimParams(dim=dim, A=float(a), B=float(b), residual=rms, n_points=radii.size)


def fit_coverage_stage1(radii, counts, dim: int = 0, phi: float = PHI, epsilon: float = EPSILON) -> PerDimParams:
    """Fit ``Nbar = Abar s(r) + Bbar`` for one dimension."""
    radii, counts = _check_stage1(radii, counts, "coverage")
    design = np.column_stack([coverage_regressor(radii, phi, epsilon), np.ones_like(radii)])
    (a, b), rms = _lstsq(design, counts)
    return PerDimParams(dim=dim, A=float(a), B=float(b), residual=rms, n_points=radii.size)


def _stage2(per_dim, power):
    dims = np.array([p.dim for p in per_dim], dtype=np.float64)
    if np.unique(dims).size < 2:
        raise UnderdeterminedFitError("underdetermined stage-2 fit: needs >= 2 dimensions")
    design = np.column_stack([dims**power, np.ones_like(dims)])
    (sa, ia), rms_a = _lstsq(design, np.array([p.A for p in per_dim]))
    (sb, ib), rms_b = _lstsq(design, np.array([p.B for p in per_dim]))
    return (float(sa), float(ia), float(sb), float(ib)), {"A": rms_a, "B": rms_b}


def fit_capacity_stage2(per_dim: list[PerDimParams]) -> CapacityParams:
    (alpha, beta, gamma, delta), _ = _stage2(per_dim, 1)
    return CapacityParams(alpha, beta, gamma, delta)


def fit_coverage_stage2(per_dim: list[PerDimParams]) -> CoverageParams:
    (ab, bb, gb, db), _ = _stage2(per_dim, 3)
    return CoverageParams(ab, bb, gb, db)


def log_capacity(params: FitParams, r, d):
    c = params.capacity
    r = np.asarray(r, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    return d * (c.alpha + c.gamma * r) + c.beta + c.delta * r


def eval_capacity(params: FitParams, r, d):
    out = np.exp(log_capacity(params, r, d))
    return float(out) if out.ndim == 0 else out


def coverage_raw(params: FitParams, r, d):
    """Coverage model value before clamping (may be negative)."""
    c = params.coverage
    d3 = np.asarray(d, dtype=np.float64) ** 3
    s = coverage_regressor(r, params.phi, params.epsilon)
    return (c.alpha_bar * d3 + c.beta_bar) * s + c.gamma_bar * d3 + c.delta_bar


def eval_coverage(params: FitParams, r, d, with_flag: bool = False):
    """Coverage model clamped at zero.

    With ``with_flag=True`` also returns whether the raw model went negative
    ("model out of range").
    """
    raw = coverage_raw(params, r, d)
    out = np.maximum(raw, 0.0)
    clamped = raw < 0.0
    if out.ndim == 0:
        out, clamped = float(out), bool(clamped)
    return (out, clamped) if with_flag else out


# -- sweep tables -----------------------------------------------------------

CAPACITY_COUNT = "N"
COVERAGE_COUNT = "N_bar"


def _truthy(v) -> bool:
    if isinstance(v, bool):
        return v
    return str(v).strip().lower() in ("1", "true", "yes")


def read_sweep(path) -> list[dict]:
    """Rows of a sweep CSV or JSON file, as dicts."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        data = json.loads(text)
        rows = data["rows"] if isinstance(data, dict) else data
        return [dict(r) for r in rows]
    return list(csv.DictReader(text.splitlines()))


def _normalise_row(row: dict, count_key: str) -> dict:
    aliases = {"d": ("d", "dim"), "r": ("r", "radius"),
               "N": ("N", "capacity"), "N_bar": ("N_bar", "coverage")}
    out = {}
    for key in ("d", "r", count_key):
        for alias in aliases[key]:
            if alias in row and row[alias] not in (None, ""):
                out[key] = row[alias]
                break
        else:
            raise SweepSchemaError(f"sweep row lacks column {key!r} (have {sorted(row)})")
    out["d"] = int(float(out["d"]))
    out["r"] = float(out["r"])
    out["count"] = float(out.pop(count_key))
    out["converged"] = _truthy(row.get("converged", True))
    out["ceiling_reached"] = _truthy(row.get("ceiling_reached", False))
    out["error"] = row.get("error") or None
    return out


def _fit(rows, model, stage1, power):
    count_key = CAPACITY_COUNT if model == "capacity" else COVERAGE_COUNT
    clean, excluded = [], []
    for raw in rows:
        row = _normalise_row(raw, count_key)
        reasons = []
        if not row["converged"]:
            reasons.append("not converged")
        if row["ceiling_reached"]:
            reasons.append("ceiling reached")
        if row["error"]:
            reasons.append(f"error: {row['error']}")
        if reasons:
            excluded.append({"d": row["d"], "r": row["r"], "reasons": reasons})
        else:
            clean.append(row)
    by_dim: dict[int, list] = {}
    for row in clean:
        by_dim.setdefault(row["d"], []).append(row)
    per_dim = []
    for d in sorted(by_dim):
        cells = by_dim[d]
        per_dim.append(stage1([c["r"] for c in cells], [c["count"] for c in cells], dim=d))
    coefs, resid = _stage2(per_dim, power)
    return per_dim, coefs, resid, excluded


def fit_capacity(rows) -> FitReport:
    per_dim, coefs, resid, excluded = _fit(rows, "capacity", fit_capacity_stage1, 1)
    params = FitParams(capacity=CapacityParams(*coefs))
    return FitReport("capacity", params, per_dim, excluded, resid)


def fit_coverage(rows) -> FitReport:
    per_dim, coefs, resid, excluded = _fit(rows, "coverage", fit_coverage_stage1, 3)
    params = FitParams(coverage=CoverageParams(*coefs))
    return FitReport("coverage", params, per_dim, excluded, resid)


def synthetic_sweep(params: FitParams, model: str, dims, radii) -> list[dict]:
    """Sweep rows evaluated exactly from a model (no rounding to integers)."""
    rows = []
    for d in dims:
        for r in radii:
            if model == "capacity":
                rows.append({"d": d, "r": r, "N": eval_capacity(params, r, d),
                             "converged": True, "ceiling_reached": False})
            elif model == "coverage":
                rows.append({"d": d, "r": r, "N_bar": float(coverage_raw(params, r, d)),
                             "converged": True, "ceiling_reached": False})
            else:
                raise ValueError(f"unknown model {model!r}")
    return rows


def default_grid():
    """``d = 3..10`` and ``r = 0.65 .. 1.35`` in steps of 0.05."""
    dims = list(range(3, 11))
    radii = [round(0.65 + 0.05 * k, 2) for k in range(15)]
    return dims, radii


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), math.ulp(1.0))

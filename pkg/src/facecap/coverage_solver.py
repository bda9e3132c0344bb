"""Maximum MasterFace coverage.

``n`` identity points must all sit at chord distance ``r`` from a fixed
MasterFace point while staying at least ``r`` apart from each other.  The
constrained problem is solved as a penalty problem::

    (1/n) sum_i (D(x_i, mf) - r)^2  +  mu * sum_{i<j} max(0, r - D(x_i, x_j))^2

with ``mu`` escalated geometrically between rounds.  A placement exists
exactly when the penalised objective can be driven to zero, so the verdict
is read off the raw distances of the final configuration.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import SpherePointSet, normalize_rows, random_sphere_points
from .optimize import minimize_on_spheres
from .seeding import unit_rng

log = logging.getLogger(__name__)

PENALTY_START = 1.0
PENALTY_GROWTH = 10.0
PENALTY_ROUNDS = 6

FEASIBLE = "feasible"
INFEASIBLE_VIOLATED = "infeasible (constraint violated)"
INFEASIBLE_UNCONVERGED = "infeasible (unconverged)"


@dataclass(frozen=True)
class CoverageConfig:
    dim: int
    radius: float
    n_max: int = 64
    restarts: int = 32
    max_iters: int = 5000
    seed: int = 0
    feasibility_tol: float = 1e-6
    match_slack: float = 1e-6
    gtol: float = 1e-12
    xtol: float = 1e-12
    warm_start: bool = True

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")
        if not 0.0 < self.radius < 2.0:
            raise ValueError(f"radius must lie in (0, 2), got {self.radius}")
        if self.n_max < 1:
            raise ValueError(f"n_max must be >= 1, got {self.n_max}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class Placement:
    """Outcome of :func:`place_around_masterface` for one ``n``."""

    points: SpherePointSet
    masterface: np.ndarray
    objective: float
    worst_match_distance: float
    match_residual: float
    min_separation: float
    converged: bool
    verdict: str
    restart_index: int
    attempts: int

    @property
    def feasible(self) -> bool:
        return self.verdict == FEASIBLE


@dataclass
class CoverageResult:
    dim: int
    radius: float
    coverage: int
    objective: float
    worst_match_distance: float
    match_residual: float
    min_separation: float
    feasible_at_coverage: bool
    infeasible_at_next: bool
    next_verdict: str | None
    ceiling_reached: bool
    converged: bool
    verdict_by_n: dict = field(default_factory=dict)
    error: str | None = None

    def row(self) -> dict:
        return {
            "d": self.dim,
            "r": self.radius,
            "N_bar": self.coverage,
            "objective": self.objective,
            "worst_match_distance": self.worst_match_distance,
            "min_separation": self.min_separation,
            "converged": self.converged,
            "ceiling_reached": self.ceiling_reached,
        }

    def to_dict(self) -> dict:
        out = asdict(self)
        out["verdict_by_n"] = {str(k): v for k, v in self.verdict_by_n.items()}
        return out


def north_pole(d: int) -> np.ndarray:
    pole = np.zeros(d)
    pole[-1] = 1.0
    return pole


def polar_angle(r: float) -> float:
    """Angle from the pole at which the chord distance equals ``r``."""
    return 2.0 * math.asin(r / 2.0)


def ring_points(rng: np.random.Generator, n: int, pole: np.ndarray, r: float) -> np.ndarray:
    """Random points at chord distance exactly ``r`` from ``pole``."""
    d = pole.size
    u = rng.standard_normal((n, d))
    u -= np.outer(u @ pole, pole)
    u = normalize_rows(u)
    theta = polar_angle(r)
    return math.cos(theta) * pole[None, :] + math.sin(theta) * u


def measure(x: np.ndarray, pole: np.ndarray, r: float) -> dict:
    """Raw distance statistics of a placement, independent of solver state."""
    match = np.linalg.norm(x - pole[None, :], axis=1)
    out = {
        "objective": float(np.mean((match - r) ** 2)),
        "worst_match_distance": float(match.max()),
        "match_residual": float(np.abs(match - r).max()),
        "min_separation": math.inf,
    }
    n = x.shape[0]
    if n > 1:
        diff = x[:, None, :] - x[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        out["min_separation"] = float(dist[np.triu_indices(n, k=1)].min())
    return out


def is_feasible(stats: dict, r: float, match_slack: float, feasibility_tol: float) -> bool:
    return stats["match_residual"] <= match_slack and stats["min_separation"] >= r - feasibility_tol


def _penalized(pole, r, mu):
    n_inv = None

    def fun(x):
        nonlocal n_inv
        n = x.shape[0]
        if n_inv is None:
            n_inv = 1.0 / n
        diff_mf = x - pole[None, :]
        dm = np.sqrt(np.maximum(2.0 - 2.0 * (x @ pole), 0.0))
        gap = dm - r
        value = n_inv * float(gap @ gap)
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(dm > 0.0, 2.0 * n_inv * gap / dm, 0.0)
        grad = coef[:, None] * diff_mf
        if n > 1:
            gram = x @ x.T
            dist = np.sqrt(np.maximum(2.0 - 2.0 * gram, 0.0))
            np.fill_diagonal(dist, np.inf)
            hinge = np.maximum(r - dist, 0.0)
            value += mu * 0.5 * float(np.sum(hinge * hinge))
            with np.errstate(divide="ignore", invalid="ignore"):
                w = np.where(hinge > 0.0, -2.0 * mu * hinge / np.maximum(dist, 1e-300), 0.0)
            grad += w.sum(axis=1)[:, None] * x - w @ x
        return value, grad

    return fun


def _solve_penalty(x0, pole, r, max_iters, gtol, xtol):
    x = x0
    converged = True
    mu = PENALTY_START
    for _ in range(PENALTY_ROUNDS):
        res = minimize_on_spheres(_penalized(pole, r, mu), x, max_iters=max_iters, gtol=gtol, xtol=xtol)
        x = res.points
        converged = res.converged
        mu *= PENALTY_GROWTH
    return normalize_rows(x), converged


def place_around_masterface(
    n: int,
    d: int,
    r: float,
    restarts: int = 32,
    max_iters: int = 5000,
    seed: int = 0,
    *,
    pole=None,
    warm_start=None,
    feasibility_tol: float = 1e-6,
    match_slack: float = 1e-6,
    gtol: float = 1e-12,
    xtol: float = 1e-12,
) -> Placement:
    """Try to place ``n`` separable identities around one MasterFace point.

    Candidates are tried in a fixed order (warm start first, then restarts
    ``0 .. restarts-1``) and the first feasible one is returned.  If none is
    feasible the candidate with the smallest penalised residual is returned
    with an infeasible verdict; ``"infeasible (unconverged)"`` marks the case
    where that candidate's solver hit its iteration cap.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not 0.0 < r < 2.0:
        raise ValueError(f"radius must lie in (0, 2), got {r}")
    pole = north_pole(d) if pole is None else normalize_rows(np.asarray(pole, float)[None, :])[0]
    if pole.size != d:
        raise ValueError("pole dimension does not match d")

    def candidates():
        if warm_start is not None:
            prev = np.asarray(warm_start.points if isinstance(warm_start, SpherePointSet) else warm_start)
            if prev.shape != (n - 1, d):
                raise ValueError(f"warm start must have shape {(n - 1, d)}, got {prev.shape}")
            rng = unit_rng(seed, n, d, 0, 3)
            yield -1, np.vstack([prev, ring_points(rng, 1, pole, r)])
        for k in range(restarts):
            yield k, ring_points(unit_rng(seed, n, d, k, 2), n, pole, r)

    best = None
    attempts = 0
    for idx, x0 in candidates():
        attempts += 1
        x, converged = _solve_penalty(x0, pole, r, max_iters, gtol, xtol)
        stats = measure(x, pole, r)
        ok = is_feasible(stats, r, match_slack, feasibility_tol)
        violation = max(stats["match_residual"] - match_slack, r - feasibility_tol - stats["min_separation"], 0.0)
        key = (not ok, violation, idx)
        if best is None or key < best[0]:
            best = (key, idx, x, stats, converged, ok)
        if ok:
            break

    _, idx, x, stats, converged, ok = best
    if ok:
        verdict = FEASIBLE
    else:
        verdict = INFEASIBLE_VIOLATED if converged else INFEASIBLE_UNCONVERGED
    return Placement(
        points=SpherePointSet(x),
        masterface=pole,
        objective=stats["objective"],
        worst_match_distance=stats["worst_match_distance"],
        match_residual=stats["match_residual"],
        min_separation=stats["min_separation"],
        converged=converged,
        verdict=verdict,
        restart_index=idx,
        attempts=attempts,
    )


def max_coverage(cfg: CoverageConfig, pole=None) -> CoverageResult:
    """Largest feasible ``n <= n_max``, scanning upward from ``n = 1``."""
    last_ok = None
    fail = None
    verdicts = {}
    converged = True
    for n in range(1, cfg.n_max + 1):
        warm = last_ok[1].points if (cfg.warm_start and last_ok is not None) else None
        p = place_around_masterface(
            n, cfg.dim, cfg.radius, cfg.restarts, cfg.max_iters, cfg.seed,
            pole=pole, warm_start=warm, feasibility_tol=cfg.feasibility_tol,
            match_slack=cfg.match_slack, gtol=cfg.gtol, xtol=cfg.xtol,
        )
        verdicts[n] = p.verdict
        converged = converged and p.converged
        log.debug("d=%d r=%.4f n=%d %s", cfg.dim, cfg.radius, n, p.verdict)
        if not p.feasible:
            fail = p
            break
        last_ok = (n, p)

    if last_ok is None:
        raise RuntimeError("a single identity could not be placed; solver failure")
    n_ok, ok = last_ok
    return CoverageResult(
        dim=cfg.dim,
        radius=cfg.radius,
        coverage=n_ok,
        objective=ok.objective,
        worst_match_distance=ok.worst_match_distance,
        match_residual=ok.match_residual,
        min_separation=ok.min_separation,
        feasible_at_coverage=True,
        infeasible_at_next=fail is not None,
        next_verdict=None if fail is None else fail.verdict,
        ceiling_reached=fail is None,
        converged=converged,
        verdict_by_n=verdicts,
    )


def coverage_sweep(dims, radii, **defaults) -> list[CoverageResult]:
    dims = list(dims)
    radii = list(radii)
    if not dims or not radii:
        raise ValueError("sweep grids must be nonempty")
    rows = []
    for d in dims:
        for r in radii:
            try:
                rows.append(max_coverage(CoverageConfig(dim=d, radius=r, **defaults)))
            except Exception as exc:  # noqa: BLE001 - reported per cell
                log.warning("coverage cell d=%s r=%s failed: %s", d, r, exc)
                rows.append(CoverageResult(
                    dim=d, radius=r, coverage=0, objective=float("nan"),
                    worst_match_distance=float("nan"), match_residual=float("nan"),
                    min_separation=float("nan"), feasible_at_coverage=False,
                    infeasible_at_next=False, next_verdict=None, ceiling_reached=False,
                    converged=False, error=f"{type(exc).__name__}: {exc}",
                ))
    return rows


CSV_COLUMNS = ["d", "r", "N_bar", "objective", "worst_match_distance", "min_separation",
               "converged", "ceiling_reached"]


def sweep_to_csv(rows: list[CoverageResult]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for res in rows:
        writer.writerow({k: _fmt(v) for k, v in res.row().items()})
    return buf.getvalue()


def sweep_to_json(rows: list[CoverageResult]) -> str:
    return json.dumps({"kind": "coverage", "rows": [r.to_dict() for r in rows]}, indent=2)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return v

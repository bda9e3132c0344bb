"""Face capacity: how many identities fit on the sphere with separation ``r``.

For each ``n`` the points are spread out by minimising the Riesz energy
``sum_{i<j} 1 / D(x_i, x_j)`` on the unit sphere; the nearest-neighbour
distance ``r'(n)`` of the best configuration is then compared against the
decision distance.  The scan walks ``n = 2, 3, ...`` and stops at the first
``n`` whose ``r'`` falls below ``r - feasibility_tol``.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import (
    SpherePointSet,
    normalize_rows,
    random_sphere_points,
    riesz_energy_and_grad,
)
from .optimize import minimize_on_spheres
from .seeding import unit_rng

log = logging.getLogger(__name__)

WARM_START = -1
COINCIDENT_REPAIR_TOL = 1e-9
COINCIDENT_REPAIR_NOISE = 1e-6
INSERT_CANDIDATES = 64

CONVENTIONS = ("exclusive", "inclusive")


@dataclass(frozen=True)
class CapacityConfig:
    dim: int
    radius: float
    n_max: int = 512
    restarts: int = 8
    max_iters: int = 10000
    seed: int = 0
    feasibility_tol: float = 1e-6
    gtol: float = 1e-8
    xtol: float = 1e-10
    convention: str = "exclusive"
    warm_start: bool = True

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")
        if not 0.0 < self.radius < 2.0:
            raise ValueError(f"radius must lie in (0, 2), got {self.radius}")
        if self.n_max < 2:
            raise ValueError(f"n_max must be >= 2, got {self.n_max}")
        if self.restarts < 1:
            raise ValueError(f"restarts must be >= 1, got {self.restarts}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.convention not in CONVENTIONS:
            raise ValueError(f"convention must be one of {CONVENTIONS}")


@dataclass
class DistributeResult:
    points: SpherePointSet
    energy: float
    min_distance: float
    converged: bool
    iterations: int
    restart_index: int
    restart_energies: list = field(default_factory=list)


@dataclass
class CapacityResult:
    dim: int
    radius: float
    capacity: int
    realized_min_distance: float
    next_min_distance: float | None
    energy: float
    iterations_used: int
    restart_index_of_best: int
    converged: bool
    ceiling_reached: bool
    convention: str = "exclusive"
    min_distance_by_n: dict = field(default_factory=dict)
    error: str | None = None

    def row(self) -> dict:
        return {
            "d": self.dim,
            "r": self.radius,
            "N": self.capacity,
            "r_prime": self.realized_min_distance,
            "energy": self.energy,
            "converged": self.converged,
            "ceiling_reached": self.ceiling_reached,
        }

    def to_dict(self) -> dict:
        out = asdict(self)
        out["min_distance_by_n"] = {str(k): v for k, v in self.min_distance_by_n.items()}
        return out


def _min_distance(x: np.ndarray) -> float:
    gram = x @ x.T
    np.fill_diagonal(gram, -np.inf)
    return float(math.sqrt(max(2.0 - 2.0 * gram.max(), 0.0)))


def _repair_coincident(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Nudge points off each other while any pair is closer than 1e-9."""
    x = x.copy()
    for _ in range(100):
        gram = x @ x.T
        sq = np.maximum(2.0 - 2.0 * gram, 0.0)
        np.fill_diagonal(sq, np.inf)
        i, j = np.unravel_index(np.argmin(sq), sq.shape)
        if sq[i, j] >= COINCIDENT_REPAIR_TOL**2:
            return x
        x[j] = x[j] + COINCIDENT_REPAIR_NOISE * rng.standard_normal(x.shape[1])
        x[j] /= np.linalg.norm(x[j])
    return x


def insert_point(points: np.ndarray, rng: np.random.Generator, candidates: int = INSERT_CANDIDATES) -> np.ndarray:
    """Append the random candidate that lies farthest from the existing points."""
    cand = random_sphere_points(rng, candidates, points.shape[1])
    best = int(np.argmin((cand @ points.T).max(axis=1)))
    return np.vstack([points, cand[best]])


def _energy_objective(x):
    energy, grad, _ = riesz_energy_and_grad(x)
    return energy, grad


def _solve_one(x0, max_iters, gtol, xtol, rng):
    x0 = _repair_coincident(x0, rng)
    res = minimize_on_spheres(_energy_objective, x0, max_iters=max_iters, gtol=gtol, xtol=xtol)
    return res


def distribute(
    n: int,
    d: int,
    restarts: int = 8,
    max_iters: int = 10000,
    seed: int = 0,
    *,
    warm_start=None,
    gtol: float = 1e-8,
    xtol: float = 1e-10,
    workers: int = 1,
) -> DistributeResult:
    """Spread ``n`` points on the unit sphere in ``R^d`` by energy minimisation.

    Every restart starts from uniform random points; its generator is derived
    from ``(seed, n, d, restart)`` so the result does not depend on the order
    in which restarts run.  ``warm_start`` (an ``(n - 1, d)`` configuration)
    adds one extra candidate built by inserting a point into the largest gap.
    The lowest-energy candidate wins, ties going to the lower index with the
    warm start counted as index ``-1``.
    """
    if n < 2:
        raise ValueError(f"distribute needs n >= 2, got {n}")
    if d < 2:
        raise ValueError(f"distribute needs d >= 2, got {d}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")

    jobs = []
    if warm_start is not None:
        prev = np.asarray(warm_start.points if isinstance(warm_start, SpherePointSet) else warm_start)
        if prev.shape != (n - 1, d):
            raise ValueError(f"warm start must have shape {(n - 1, d)}, got {prev.shape}")
        rng = unit_rng(seed, n, d, 0, 1)
        jobs.append((WARM_START, insert_point(prev, rng), rng))
    for k in range(restarts):
        rng = unit_rng(seed, n, d, k, 0)
        jobs.append((k, random_sphere_points(rng, n, d), rng))

    def run(job):
        idx, x0, rng = job
        return idx, _solve_one(x0, max_iters, gtol, xtol, rng)

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    best_idx, best = min(results, key=lambda item: (item[1].value, item[0]))
    pts = normalize_rows(best.points)
    return DistributeResult(
        points=SpherePointSet(pts),
        energy=float(best.value),
        min_distance=_min_distance(pts),
        converged=best.converged,
        iterations=sum(r.iterations for _, r in results),
        restart_index=best_idx,
        restart_energies=[float(r.value) for _, r in results],
    )


class CapacityScan:
    """Lazily computed sequence of best configurations for ``n = 2, 3, ...``.

    The sequence depends on the dimension, seed and solver settings but not
    on the radius, so one scan serves every radius of a sweep column.
    """

    def __init__(self, dim, restarts=8, max_iters=10000, seed=0, gtol=1e-8, xtol=1e-10,
                 warm_start=True, workers=1):
        self.dim = dim
        self.restarts = restarts
        self.max_iters = max_iters
        self.seed = seed
        self.gtol = gtol
        self.xtol = xtol
        self.warm_start = warm_start
        self.workers = workers
        self._results: dict[int, DistributeResult] = {}

    @classmethod
    def for_config(cls, cfg: CapacityConfig, workers=1) -> "CapacityScan":
        return cls(cfg.dim, cfg.restarts, cfg.max_iters, cfg.seed, cfg.gtol, cfg.xtol,
                   cfg.warm_start, workers)

    def matches(self, cfg: CapacityConfig) -> bool:
        return (self.dim, self.restarts, self.max_iters, self.seed, self.gtol, self.xtol,
                self.warm_start) == (cfg.dim, cfg.restarts, cfg.max_iters, cfg.seed,
                                     cfg.gtol, cfg.xtol, cfg.warm_start)

    def __getitem__(self, n: int) -> DistributeResult:
        if n < 2:
            raise KeyError(n)
        start = max(self._results, default=1) + 1
        for m in range(start, n + 1):
            prev = self._results.get(m - 1) if self.warm_start else None
            self._results[m] = distribute(
                m, self.dim, self.restarts, self.max_iters, self.seed,
                warm_start=prev.points if prev is not None else None,
                gtol=self.gtol, xtol=self.xtol, workers=self.workers,
            )
            log.debug("d=%d n=%d r'=%.6f E=%.6f", self.dim, m,
                      self._results[m].min_distance, self._results[m].energy)
        return self._results[n]


def capacity(cfg: CapacityConfig, scan: CapacityScan | None = None, workers: int = 1) -> CapacityResult:
    """Greatest ``n <= n_max`` whose optimum keeps ``r'(n) >= r - feasibility_tol``.

    The scan stops at the first failing ``n``; its ``r'`` is reported as the
    witness ``next_min_distance``.  With ``convention="inclusive"`` the
    reported capacity is that first failing ``n`` instead.  If ``n_max``
    itself passes, the result is flagged ``ceiling_reached``.
    """
    if scan is None:
        scan = CapacityScan.for_config(cfg, workers=workers)
    elif not scan.matches(cfg):
        raise ValueError("scan was built for a different solver configuration")

    threshold = cfg.radius - cfg.feasibility_tol
    history = {}
    iterations = 0
    converged = True
    last_ok = None
    fail = None
    for n in range(2, cfg.n_max + 1):
        res = scan[n]
        history[n] = res.min_distance
        iterations += res.iterations
        converged = converged and res.converged
        if res.min_distance < threshold:
            fail = res
            break
        last_ok = (n, res)

    if last_ok is None:
        # unreachable for radius < 2: two antipodal points always separate
        raise RuntimeError("no feasible configuration found even at n = 2")
    n_ok, ok = last_ok
    ceiling = fail is None
    reported = n_ok
    if cfg.convention == "inclusive" and not ceiling:
        reported = n_ok + 1
    return CapacityResult(
        dim=cfg.dim,
        radius=cfg.radius,
        capacity=reported,
        realized_min_distance=ok.min_distance,
        next_min_distance=None if ceiling else fail.min_distance,
        energy=ok.energy,
        iterations_used=iterations,
        restart_index_of_best=ok.restart_index,
        converged=converged,
        ceiling_reached=ceiling,
        convention=cfg.convention,
        min_distance_by_n=history,
    )


def capacity_sweep(dims, radii, workers: int = 1, **defaults) -> list[CapacityResult]:
    """One :func:`capacity` result per ``(d, r)`` cell.

    Cells sharing a dimension reuse one :class:`CapacityScan`, which yields
    exactly the per-cell results because the scan does not depend on ``r``.
    A failing cell is reported with its ``error`` set instead of aborting.
    """
    dims = list(dims)
    radii = list(radii)
    if not dims or not radii:
        raise ValueError("sweep grids must be nonempty")
    rows = []
    for d in dims:
        scan = None
        # descending radius so the scan grows monotonically
        for r in sorted(radii, reverse=True):
            try:
                cfg = CapacityConfig(dim=d, radius=r, **defaults)
                if scan is None:
                    scan = CapacityScan.for_config(cfg, workers=workers)
                rows.append(capacity(cfg, scan))
            except Exception as exc:  # noqa: BLE001 - reported per cell
                log.warning("capacity cell d=%s r=%s failed: %s", d, r, exc)
                rows.append(_failed_cell(d, r, defaults.get("convention", "exclusive"), exc))
    order = {(d, r): i for i, (d, r) in enumerate((d, r) for d in dims for r in radii)}
    rows.sort(key=lambda res: order[(res.dim, res.radius)])
    return rows


def _failed_cell(d, r, convention, exc):
    return CapacityResult(
        dim=d, radius=r, capacity=0, realized_min_distance=float("nan"),
        next_min_distance=None, energy=float("nan"), iterations_used=0,
        restart_index_of_best=0, converged=False, ceiling_reached=False,
        convention=convention, error=f"{type(exc).__name__}: {exc}",
    )


CSV_COLUMNS = ["d", "r", "N", "r_prime", "energy", "converged", "ceiling_reached"]


def sweep_to_csv(rows: list[CapacityResult]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for res in rows:
        writer.writerow({k: _fmt(v) for k, v in res.row().items()})
    return buf.getvalue()


def sweep_to_json(rows: list[CapacityResult]) -> str:
    return json.dumps({"kind": "capacity", "rows": [r.to_dict() for r in rows]}, indent=2)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return v

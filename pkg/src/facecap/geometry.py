"""Unit-sphere primitives shared by the solvers and the evaluation harness.

All distances are Euclidean chord distances between unit vectors.  Cosine
similarity is only used by the evaluation harness and converts through
``D**2 = 2 - 2 cos``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NORM_TOL = 1e-9
COINCIDENT_TOL = 1e-12


class DegenerateEmbeddingError(ValueError):
    """A vector with zero norm cannot be placed on the sphere."""

    def __init__(self, where: str = ""):
        msg = "degenerate embedding"
        if where:
            msg = f"{msg}: {where}"
        super().__init__(msg)


class DegenerateConfigurationError(ValueError):
    """Two points coincide (within ``COINCIDENT_TOL``)."""

    def __init__(self, i: int, j: int):
        super().__init__(f"degenerate configuration: points {i} and {j} coincide")
        self.pair = (i, j)


@dataclass(frozen=True)
class SpherePointSet:
    """``n`` unit vectors in ``R^d`` stored as a read-only ``(n, d)`` array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2:
            raise ValueError("points must be a 2-d array of shape (n, d)")
        n, d = pts.shape
        if n < 1:
            raise ValueError("a point set needs at least one point")
        if d < 2:
            raise ValueError(f"dimension must be >= 2, got {d}")
        norms = np.linalg.norm(pts, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOL)
        if bad.size:
            raise ValueError(
                f"point {bad[0]} has norm {norms[bad[0]]!r}, expected 1 within {NORM_TOL}"
            )
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_vectors(cls, vectors) -> "SpherePointSet":
        """Normalise arbitrary nonzero vectors onto the sphere."""
        return cls(normalize_rows(np.asarray(vectors, dtype=np.float64)))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n


def project_to_sphere(v) -> np.ndarray:
    """Return ``v / ||v||``.

    Raises
    ------
    DegenerateEmbeddingError
        If ``v`` has zero norm.
    """
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not norm > 0.0 or not np.isfinite(norm):
        raise DegenerateEmbeddingError()
    return v / norm


def normalize_rows(vectors: np.ndarray) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    zero = np.flatnonzero(~(norms[:, 0] > 0.0))
    if zero.size:
        raise DegenerateEmbeddingError(f"row {zero[0]}")
    return vectors / norms


def random_sphere_points(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """Uniform points on the unit sphere (normalised standard Gaussians)."""
    x = rng.standard_normal((n, dim))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    # a Gaussian draw of exactly zero is a measure-zero event, redraw anyway
    while np.any(norms == 0.0):
        idx = np.flatnonzero(norms[:, 0] == 0.0)
        x[idx] = rng.standard_normal((idx.size, dim))
        norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / norms


def _as_array(s) -> np.ndarray:
    if isinstance(s, SpherePointSet):
        return s.points
    return np.asarray(s, dtype=np.float64)


def pairwise_distances(s) -> np.ndarray:
    """Symmetric matrix of Euclidean distances with an exact zero diagonal."""
    x = _as_array(s)
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    dist = 0.5 * (dist + dist.T)
    np.fill_diagonal(dist, 0.0)
    return dist


def pairwise_min_distance(s) -> float:
    """Nearest-neighbour distance ``min_{i<j} D(x_i, x_j)``."""
    x = _as_array(s)
    if x.shape[0] < 2:
        raise ValueError("pairwise_min_distance needs at least two points")
    dist = pairwise_distances(x)
    iu = np.triu_indices(x.shape[0], k=1)
    return float(dist[iu].min())


def riesz_energy(s) -> float:
    """Sum of inverse distances over unordered pairs.

    Raises
    ------
    DegenerateConfigurationError
        If two points are closer than ``COINCIDENT_TOL``.
    """
    x = _as_array(s)
    n = x.shape[0]
    if n < 2:
        raise ValueError("riesz_energy needs at least two points")
    dist = pairwise_distances(x)
    iu = np.triu_indices(n, k=1)
    d = dist[iu]
    k = int(np.argmin(d))
    if d[k] < COINCIDENT_TOL:
        raise DegenerateConfigurationError(int(iu[0][k]), int(iu[1][k]))
    return float(np.sum(1.0 / d))


def riesz_energy_and_grad(x: np.ndarray) -> tuple[float, np.ndarray, float]:
    """Energy, Euclidean gradient and minimum squared distance for unit rows.

    Works from the Gram matrix, so ``x`` must already be normalised.  This is
    the hot loop of the capacity solver.
    """
    gram = x @ x.T
    sq = np.maximum(2.0 - 2.0 * gram, 0.0)
    np.fill_diagonal(sq, np.inf)
    min_sq = float(sq.min()) if x.shape[0] > 1 else np.inf
    with np.errstate(divide="ignore"):
        inv = 1.0 / np.sqrt(sq)
    energy = 0.5 * float(inv.sum())
    w = inv**3
    grad = w @ x - w.sum(axis=1)[:, None] * x
    return energy, grad, min_sq


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.clip(a @ b, -1.0, 1.0))


def chord_from_cosine(cos):
    """Chord distance between unit vectors with the given cosine similarity."""
    return np.sqrt(np.maximum(2.0 - 2.0 * np.asarray(cos, dtype=np.float64), 0.0))


def cosine_from_chord(dist):
    return 1.0 - 0.5 * np.asarray(dist, dtype=np.float64) ** 2

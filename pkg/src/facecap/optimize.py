"""Minimisation over products of unit spheres.

Each row of the variable matrix lives on its own sphere.  Search directions
are limited-memory BFGS directions built from Riemannian (tangent-projected)
gradients; steps are retracted by per-row renormalisation and accepted by
Armijo backtracking.  When the quasi-Newton direction fails to descend the
step falls back to the projected gradient.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass
class SphereMinResult:
    points: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    message: str


def tangent_project(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Remove the radial component of ``g`` row by row."""
    return g - np.sum(g * x, axis=1, keepdims=True) * x


def retract(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _two_loop(grad, pairs):
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * np.dot(s, q)
        alphas.append(a)
        q -= a * y
    s, y, _ = pairs[-1]
    q *= np.dot(s, y) / np.dot(y, y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return -q


def minimize_on_spheres(
    fun: Objective,
    x0: np.ndarray,
    *,
    max_iters: int = 10000,
    gtol: float = 1e-8,
    xtol: float = 1e-10,
    memory: int = 10,
    max_first_step: float = 0.1,
) -> SphereMinResult:
    """Minimise ``fun`` with every row of the argument constrained to unit norm.

    ``fun(x)`` returns the value and the Euclidean gradient at ``x``.  Stops
    when the Riemannian gradient norm drops below ``gtol`` or an accepted
    step moves the points by less than ``xtol`` (Frobenius norm).
    """
    x = retract(np.array(x0, dtype=np.float64))
    shape = x.shape
    f, g = fun(x)
    rg = tangent_project(x, g)
    pairs: deque = deque(maxlen=memory)

    for it in range(max_iters):
        gflat = rg.ravel()
        gnorm = float(np.linalg.norm(gflat))
        if gnorm < gtol:
            return SphereMinResult(x, f, gnorm, it, True, "gradient tolerance")

        if pairs:
            p = tangent_project(x, _two_loop(gflat, list(pairs)).reshape(shape))
            slope = float(np.dot(p.ravel(), gflat))
            if not slope < 0.0:
                pairs.clear()
        if not pairs:
            p = -rg
            slope = -gnorm**2
            # keep the first steepest-descent step small on the sphere
            t = min(1.0, max_first_step / max(float(np.abs(p).max()), 1e-300))
        else:
            t = 1.0

        accepted = False
        for _ in range(60):
            x_new = retract(x + t * p)
            f_new, g_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            if pairs:
                # quasi-Newton model went bad; retry from steepest descent
                pairs.clear()
                continue
            return SphereMinResult(x, f, gnorm, it, True, "step tolerance (line search floor)")

        rg_new = tangent_project(x_new, g_new)
        step = x_new - x
        s = tangent_project(x_new, step).ravel()
        y = (rg_new - tangent_project(x_new, rg)).ravel()
        sy = float(np.dot(s, y))
        if sy > 1e-12 * float(np.dot(s, s)) and sy > 0.0:
            pairs.append((s, y, 1.0 / sy))
        step_norm = float(np.linalg.norm(step))
        x, f, rg = x_new, f_new, rg_new
        if step_norm < xtol:
            return SphereMinResult(
                x, f, float(np.linalg.norm(rg)), it + 1, True, "step tolerance"
            )

    return SphereMinResult(x, f, float(np.linalg.norm(rg)), max_iters, False, "max_iters reached")

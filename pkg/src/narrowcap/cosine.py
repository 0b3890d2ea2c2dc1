"""Width-one, depth-three cosine networks fitting values on finite sets.

``F(x) = (1/delta) cos(W2 cos(alpha (W1 x + b1))``.  The inner layer maps the
samples to distinct numbers ``z_j``; the outer weight ``W2`` is found by
scanning the orbit ``W2 * (z_1, ..., z_m)`` on the torus until every
``cos(W2 z_j)`` is within tolerance of its scaled target.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from narrowcap.errors import SearchBudgetExceeded
from narrowcap.geometry import PointCloud, as_cloud
from narrowcap.network import COSINE, Layer, Network

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 1e7
_CHUNK = 1 << 18


@dataclass
class CosineFitProblem:
    points: PointCloud
    targets: np.ndarray
    eps: float
    delta: float | None = None

    def __post_init__(self):
        self.points = as_cloud(self.points)
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1)
        if self.targets.size != len(self.points):
            raise ValueError("one target per point required")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if len(np.unique(self.points.points, axis=0)) < len(self.points):
            raise ValueError("points must be pairwise distinct")
        peak = float(np.abs(self.targets).max())
        if self.delta is None:
            self.delta = 1.0 if peak <= 1.0 else 1.0 / peak
        if not self.delta > 0 or self.delta * peak > 1.0 + 1e-15:
            raise ValueError("delta must satisfy delta * |target| <= 1")


@dataclass
class CosineFitResult:
    alpha: float
    W1: np.ndarray
    b1: float
    W2: float
    delta: float
    achieved_error: float
    network: Network = field(repr=False)
    grid_steps: int = 0


def choose_projection(points, seed=0, spread=3.0, max_tries=100):
    """Affine ``x -> W1 x + b1`` giving distinct images in ``[1, 1 + spread]``."""
    P = as_cloud(points)
    X = P.points
    if len(P) == 1:
        return np.zeros(P.dim), 1.0
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        d = rng.standard_normal(P.dim)
        y = X @ d
        width = y.max() - y.min()
        if width <= 0:
            continue
        d *= spread / width
        y = X @ d
        b1 = 1.0 - y.min()
        ys = np.sort(y + b1)
        if np.diff(ys).min() > 1e-9 and ys[0] > 0:
            return d, float(b1)
    raise ValueError("no injective projection found; are the points distinct?")


def choose_alpha(y, seed=0, min_gap=1e-9, max_tries=10_000) -> float:
    """Uniform draw on [0, 1] making ``cos(alpha y_j)`` distinct and nonzero."""
    y = np.asarray(y, dtype=float).reshape(-1)
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        alpha = float(rng.uniform(0.0, 1.0))
        z = np.cos(alpha * y)
        if np.abs(z).min() <= 1e-9:
            continue
        if z.size > 1 and np.diff(np.sort(z)).min() <= min_gap:
            continue
        return alpha
    raise ValueError("could not draw a generic alpha")


def _max_error(w, z, t):
    return np.abs(np.cos(np.multiply.outer(w, z)) - t).max(axis=-1)


def fit_torus_shift(z, t, tol, budget=DEFAULT_BUDGET, refine=True):
    """Find ``W2`` with ``max_j |cos(W2 z_j) - t_j| < tol``.

    Scans ``W2 = 0, h, 2h, ...`` up to ``budget`` with ``h = tol / (2 max|z|)``;
    the max-error function is ``max|z|``-Lipschitz so no sub-``tol/2`` basin
    is skipped.  The first grid hit is refined within its run of hits by a
    bounded scalar minimisation.  Returns ``(W2, error, grid_steps)``.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    t = np.asarray(t, dtype=float).reshape(-1)
    if z.shape != t.shape:
        raise ValueError("z and t must have equal length")
    if np.any(np.abs(t) > 1):
        raise ValueError("targets must lie in [-1, 1]")
    if np.any(z == 0):
        raise ValueError("z entries must be nonzero")
    h = tol / (2.0 * np.abs(z).max())
    n_grid = int(math.floor(budget / h)) + 1
    best_w, best_err = 0.0, math.inf
    start = 0
    while start < n_grid:
        idx = np.arange(start, min(start + _CHUNK, n_grid))
        w = idx * h
        err = _max_error(w, z, t)
        hits = np.flatnonzero(err < tol)
        if hits.size:
            first = int(idx[hits[0]])
            w_hit = first * h
            if not refine:
                return w_hit, float(err[hits[0]]), first
            return _refine(first, h, z, t, tol) + (first,)
        k = int(np.argmin(err))
        if err[k] < best_err:
            best_w, best_err = float(w[k]), float(err[k])
        start += _CHUNK
    raise SearchBudgetExceeded(
        f"no W2 in [0, {budget:g}] reaches tolerance {tol:g} (best {best_err:.4g})",
        best_w2=best_w,
        best_error=best_err,
    )


def _refine(first, h, z, t, tol):
    """Best grid point in the contiguous run of hits, then a local polish."""
    run = np.arange(first, first + 4096)
    err = _max_error(run * h, z, t)
    stop = np.flatnonzero(err >= tol)
    run_len = int(stop[0]) if stop.size else run.size
    k = int(np.argmin(err[:run_len]))
    w0, e0 = (first + k) * h, float(err[k])
    lo, hi = max(0.0, w0 - h), w0 + h
    res = minimize_scalar(lambda w: float(_max_error(np.array([w]), z, t)[0]),
                          bounds=(lo, hi), method="bounded",
                          options={"xatol": h * 1e-9})
    e1 = float(_max_error(np.array([res.x]), z, t)[0])
    if e1 < e0:
        return float(res.x), e1
    return float(w0), e0


def assemble(alpha, W1, b1, W2, delta) -> Network:
    W1 = np.asarray(W1, dtype=float).reshape(1, -1)
    return Network(
        [Layer(alpha * W1, [alpha * b1], COSINE), Layer([[W2]], [0.0], COSINE)],
        [[1.0 / delta]],
        [0.0],
    )


def cosine_fit(problem: CosineFitProblem, seed=0, budget=DEFAULT_BUDGET,
               alpha_gap=1e-2, alpha_tries=8) -> CosineFitResult:
    """Fit ``problem`` with a width-1 cosine network.

    Several generic alphas are tried (each with the full budget split
    evenly) so one unlucky draw with nearly dependent ``z_j`` does not
    exhaust the search.
    """
    P, f, delta, eps = problem.points, problem.targets, problem.delta, problem.eps
    W1, b1 = choose_projection(P, seed=seed)
    y = P.points @ W1 + b1
    t = delta * f
    tol = eps * delta
    rng = np.random.default_rng(seed)
    last_exc = None
    per_try = budget / alpha_tries if len(P) > 1 else budget
    for attempt in range(alpha_tries if len(P) > 1 else 1):
        try:
            alpha = choose_alpha(y, seed=int(rng.integers(2**31)), min_gap=alpha_gap)
        except ValueError:
            alpha = choose_alpha(y, seed=int(rng.integers(2**31)))
        z = np.cos(alpha * y)
        try:
            W2, err, steps = fit_torus_shift(z, t, tol, budget=per_try)
        except SearchBudgetExceeded as exc:
            log.info("alpha attempt %d exhausted its budget (best %.3g)", attempt, exc.best_error)
            if last_exc is None or exc.best_error < last_exc.best_error:
                last_exc = exc
            continue
        net = assemble(alpha, W1, b1, W2, delta)
        achieved = float(np.abs(net.forward(P.points)[:, 0] - f).max())
        if achieved < eps:
            return CosineFitResult(alpha=alpha, W1=W1, b1=b1, W2=W2, delta=delta,
                                   achieved_error=achieved, network=net, grid_steps=steps)
    raise last_exc if last_exc is not None else SearchBudgetExceeded(
        "no alpha produced a verified fit", best_w2=0.0, best_error=math.inf)

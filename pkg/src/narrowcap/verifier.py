"""Empirical checks: UUAC, the maximum principle on boxes, affine regions, fixtures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

from narrowcap.geometry import LabeledDataset, as_cloud
from narrowcap.network import Activation, Layer, Network, interval_bounds, lipschitz_bound


def uuac(net: Network, data: LabeledDataset) -> float:
    """Sup-norm error ``max |f(x) - F(x)|`` over the samples."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    if net.output_dim != 1:
        raise ValueError("uuac needs a scalar-output network")
    if net.input_dim != data.dim:
        raise ValueError("network and data disagree on dimension")
    return float(np.abs(net.forward(data.points)[:, 0] - data.labels).max())


def mse(net: Network, data: LabeledDataset) -> float:
    err = net.forward(data.points)[:, 0] - data.labels
    return float(np.mean(err * err))


@dataclass(frozen=True)
class BoxRegion:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape or not np.all(lo < hi):
            raise ValueError("box needs lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @classmethod
    def unit(cls, dim: int) -> "BoxRegion":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def parse(cls, text: str) -> "BoxRegion":
        """``"lo1,lo2:hi1,hi2"`` (``..`` or ``…`` also separate the corners)."""
        for sep in ("…", "...", "..", ":"):
            if sep in text:
                lo, hi = text.split(sep, 1)
                return cls([float(v) for v in lo.split(",")], [float(v) for v in hi.split(",")])
        raise ValueError(f"cannot parse box {text!r}; expected 'lo1,lo2:hi1,hi2'")


@dataclass
class MaxPrincipleReport:
    interior_max: float
    boundary_max: float
    tolerance: float
    violated: bool
    witness: np.ndarray | None = None
    interior_argmax: np.ndarray | None = None
    boundary_argmax: np.ndarray | None = None
    minimum: "MaxPrincipleReport | None" = None
    interior_exact: bool = True

    @property
    def holds(self) -> bool:
        """Neither the maximum nor (when checked) the minimum principle is violated."""
        return not self.violated and (self.minimum is None or not self.minimum.violated)


_LEAF_EXTENT = 4


class _GridSearch:
    """Maximum of a network over an axis-aligned lattice of points.

    Index boxes are pruned when their upper bound (the smaller of interval
    propagation and a Lipschitz bound around the box centre) cannot beat
    ``max(best seen, floor) + slack``.  With ``floor = -inf`` and
    ``slack = 0`` the result equals a full scan up to a 1e-12 relative
    margin; in general the returned value is within ``slack`` of the true
    lattice maximum, or below ``floor`` only if nothing exceeds it.
    """

    def __init__(self, net, origin, spacing, lipschitz, direct_limit=100_000, chunk=20_000):
        self.net = net
        self.origin = origin
        self.spacing = spacing
        self.lipschitz = lipschitz
        self.direct_limit = direct_limit
        self.chunk = chunk

    def points(self, idx):
        return self.origin + idx * self.spacing

    def run(self, lo, hi, floor=-math.inf, slack=0.0):
        lo = np.asarray(lo, dtype=np.int64)
        hi = np.asarray(hi, dtype=np.int64)
        if np.any(hi < lo):
            return -math.inf, None
        count = int(np.prod(hi - lo + 1))
        if count <= self.direct_limit:
            return self._scan(lo, hi)
        return self._branch_and_bound(lo, hi, floor, slack)

    def _scan(self, lo, hi):
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        idx = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lo.size)
        vals = self.net.forward(self.points(idx))[:, 0]
        k = int(np.argmax(vals))
        return float(vals[k]), self.points(idx[k])

    def _branch_and_bound(self, lo, hi, floor, slack):
        d = lo.size
        offsets = np.stack(np.meshgrid(*[np.arange(_LEAF_EXTENT)] * d, indexing="ij"), axis=-1).reshape(-1, d)
        stack = [(lo[None, :], hi[None, :])]
        best, best_x = -math.inf, None

        def consider(idx):
            nonlocal best, best_x
            if len(idx) == 0:
                return
            vals = self.net.forward(self.points(idx))[:, 0]
            k = int(np.argmax(vals))
            if vals[k] > best:
                best, best_x = float(vals[k]), self.points(idx[k])

        while stack:
            L, H = stack.pop()
            if len(L) > self.chunk:
                stack.append((L[self.chunk:], H[self.chunk:]))
                L, H = L[: self.chunk], H[: self.chunk]
            C = (L + H) // 2
            centre_vals = self.net.forward(self.points(C))[:, 0]
            k = int(np.argmax(centre_vals))
            if centre_vals[k] > best:
                best, best_x = float(centre_vals[k]), self.points(C[k])
            _, ub = interval_bounds(self.net, self.points(L), self.points(H))
            reach = np.linalg.norm(np.maximum(H - C, C - L) * self.spacing, axis=1)
            ub = np.minimum(ub[:, 0], centre_vals + self.lipschitz * reach)
            bar = max(best, floor)
            keep = ub > bar + slack + 1e-12 * (1.0 + abs(bar))
            L, H = L[keep], H[keep]
            extent = H - L
            leaf = np.all(extent < _LEAF_EXTENT, axis=1)
            if np.any(leaf):
                cand = L[leaf][:, None, :] + offsets[None, :, :]
                valid = np.all(offsets[None, :, :] <= extent[leaf][:, None, :], axis=2)
                consider(cand[valid])
            L, H = L[~leaf], H[~leaf]
            if not len(L):
                continue
            axis = np.argmax(H - L, axis=1)
            rows = np.arange(len(L))
            mid = (L[rows, axis] + H[rows, axis]) // 2
            H1 = H.copy()
            H1[rows, axis] = mid
            L2 = L.copy()
            L2[rows, axis] = mid + 1
            stack.append((np.vstack([L, L2]), np.vstack([H1, H])))
        return best, best_x


def _boundary_max(search, counts, slack):
    d = counts.size
    best, best_x = -math.inf, None
    for k in range(d):
        for end in (0, counts[k]):
            lo = np.zeros(d, np.int64)
            hi = counts.copy()
            lo[k] = hi[k] = end
            # faces share edges; restricting earlier axes avoids duplicates
            for j in range(k):
                lo[j], hi[j] = 1, counts[j] - 1
            val, x = search.run(lo, hi, slack=slack)
            if val > best:
                best, best_x = val, x
    return best, best_x


def _one_sided_check(net, region, h, lip, exact):
    """Decide the max principle on the grid.

    The boundary maximum is first bracketed within ``tol / 4`` (a lower
    bound); a "holds" verdict against that bound is already exact.  Only a
    suspected violation triggers the exact boundary maximum.
    """
    d = region.dim
    widths = region.upper - region.lower
    counts = np.maximum(1, np.ceil(widths / h - 1e-9)).astype(np.int64)
    spacing = widths / counts
    search = _GridSearch(net, region.lower, spacing, lip)
    tol = lip * h * math.sqrt(d)
    interior = (np.ones(d, np.int64), counts - 1)

    slack = 0.0 if exact else 0.25 * tol
    boundary_max, boundary_x = _boundary_max(search, counts, slack)
    floor = -math.inf if exact else boundary_max + tol
    interior_max, interior_x = search.run(*interior, floor=floor)
    if not exact and interior_max > boundary_max + tol:
        boundary_max, boundary_x = _boundary_max(search, counts, 0.0)
    violated = interior_max > boundary_max + tol
    n_interior = int(np.prod(np.maximum(counts - 1, 0)))
    return MaxPrincipleReport(
        interior_max=interior_max,
        boundary_max=boundary_max,
        tolerance=tol,
        violated=bool(violated),
        witness=interior_x if violated else None,
        interior_argmax=interior_x,
        boundary_argmax=boundary_x,
        interior_exact=bool(exact or violated or n_interior <= search.direct_limit),
    )


def max_principle_check(net: Network, region: BoxRegion, h: float, check_minimum=True,
                        exact=False) -> MaxPrincipleReport:
    """Compare interior and boundary maxima of ``net`` on a grid of spacing ``<= h``.

    A violation is reported when the interior grid maximum exceeds the
    boundary grid maximum by more than ``lipschitz_bound * h * sqrt(dim)``.
    The decision and any witness are those of the full grid.  Without
    ``exact``, the reported maxima are certified brackets rather than exact
    grid values: ``boundary_max`` may sit up to ``tolerance / 4`` below the
    true boundary grid maximum when no violation is found, and
    ``interior_max`` is then only the best value seen while certifying that
    nothing exceeds ``boundary_max + tolerance``.
    With ``check_minimum`` the same test runs on ``-F`` and is attached as
    ``report.minimum``.
    """
    if not h > 0:
        raise ValueError("grid step must be positive")
    if net.output_dim != 1:
        raise ValueError("maximum principle check needs a scalar-output network")
    if net.input_dim != region.dim:
        raise ValueError("network and box disagree on dimension")
    lip = lipschitz_bound(net)
    report = _one_sided_check(net, region, h, lip, exact)
    if check_minimum:
        report.minimum = _one_sided_check(net.negated(), region, h, lip, exact)
    return report


@dataclass
class AffineRegionReport:
    patterns: dict = field(default_factory=dict)   # pattern string -> sample indices
    deep_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    deep_patterns: set = field(default_factory=set)
    single_pattern: bool = True
    single_affine_map: bool = True
    threshold: float = 0.0


def activation_patterns(net: Network, X) -> np.ndarray:
    """Boolean matrix: one row per sample, one column per hidden unit (on = preactivation > 0)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cols = [net.forward_prefix(k, X) > 0 for k in range(1, net.depth)]
    return np.hstack(cols) if cols else np.zeros((len(X), 0), dtype=bool)


def _local_affine(net, pattern):
    """Affine map ``(A, c)`` realised by ``net`` on one activation pattern."""
    A = np.eye(net.input_dim)
    c = np.zeros(net.input_dim)
    pos = 0
    for layer in net.hidden_layers:
        mask = pattern[pos:pos + layer.width].astype(float)
        pos += layer.width
        A = mask[:, None] * (layer.weights @ A)
        c = mask * (layer.weights @ c + layer.bias)
    return net.final_weights @ A, net.final_weights @ c + net.final_bias


def _distance_to_hull_boundary(Y):
    if Y.shape[1] == 1:
        y = Y[:, 0]
        return np.minimum(y - y.min(), y.max() - y), float(y.max() - y.min())
    try:
        hull = ConvexHull(Y)
    except (QhullError, ValueError):
        return np.zeros(len(Y)), 0.0
    eq = hull.equations                 # unit outward normals: n.y + off <= 0 inside
    dist = -(Y @ eq[:, :-1].T + eq[:, -1]).max(axis=1)
    diam = float(pdist(Y[hull.vertices]).max())
    return dist, diam


def affine_region_check(net: Network, samples, depth_fraction=0.05) -> AffineRegionReport:
    """Group samples by ReLU pattern and test whether deep-interior images share one.

    "Deep" means the image lies farther than ``depth_fraction`` of the image
    cloud's diameter from the boundary of the image's convex hull.
    """
    if any(l.activation.kind != "relu" for l in net.hidden_layers):
        raise ValueError("affine_region_check needs a ReLU network")
    if net.output_dim != net.input_dim:
        raise ValueError("affine_region_check needs an n0-dimensional output")
    X = as_cloud(samples).points
    pats = activation_patterns(net, X)
    keys = ["".join("1" if b else "0" for b in row) for row in pats]
    groups: dict = {}
    for i, k in enumerate(keys):
        groups.setdefault(k, []).append(i)

    dist, diam = _distance_to_hull_boundary(net.forward(X))
    threshold = depth_fraction * diam
    deep = np.flatnonzero(dist > threshold) if diam > 0 else np.zeros(0, int)
    deep_keys = {keys[i] for i in deep}
    maps = [_local_affine(net, pats[deep[0]])] if len(deep) else []
    same_map = True
    for key in deep_keys:
        A, c = _local_affine(net, pats[groups[key][0]])
        if maps and not (np.allclose(A, maps[0][0], atol=1e-9) and np.allclose(c, maps[0][1], atol=1e-9)):
            same_map = False
    return AffineRegionReport(
        patterns={k: np.array(v) for k, v in groups.items()},
        deep_indices=deep,
        deep_patterns=deep_keys,
        single_pattern=len(deep_keys) <= 1,
        single_affine_map=same_map,
        threshold=threshold,
    )


def example1_networks():
    """``ReLU(-ReLU(x) + 1)`` and ``ReLU(-ReLU(x - 1) + 1)``."""
    def make(shift):
        return Network([Layer([[1.0]], [-shift]), Layer([[-1.0]], [1.0])], [[1.0]], [0.0])
    return make(0.0), make(1.0)


def example2_networks(alpha=0.5):
    """Leaky-ReLU pair agreeing at -1 and 1 but not at 0 (unless alpha = 1)."""
    act = Activation("leaky_relu", alpha)
    first = Network(
        [Layer([[1.0]], [0.0], act), Layer([[1.0 / (1.0 + alpha)]], [alpha / (1.0 + alpha)], act)],
        [[1.0]], [0.0],
    )
    second = Network([Layer([[1.0]], [1.0], act), Layer([[0.5]], [0.0], act)], [[1.0]], [0.0])
    return first, second


def uniqueness_fixtures(alpha=0.5) -> list[dict]:
    """Evaluate the two non-uniqueness example pairs at their probe points."""
    g1, g2 = example1_networks()
    h1, h2 = example2_networks(alpha)
    rows = []
    for name, (a, b), probes in (
        ("example1", (g1, g2), (0.0, 1.0, 2.0)),
        ("example2", (h1, h2), (-1.0, 0.0, 1.0)),
    ):
        for x in probes:
            va = float(a.forward([x])[0])
            vb = float(b.forward([x])[0])
            rows.append({"example": name, "x": x, "first": va, "second": vb})

    def value(name, x):
        return next((r["first"], r["second"]) for r in rows if r["example"] == name and r["x"] == x)

    assert value("example1", 0.0) == (1.0, 1.0)
    assert value("example1", 2.0) == (0.0, 0.0)
    assert value("example1", 1.0)[0] != value("example1", 1.0)[1]
    assert value("example2", -1.0) == (0.0, 0.0)
    assert value("example2", 1.0) == (1.0, 1.0)
    f0, s0 = value("example2", 0.0)
    assert abs(f0 - alpha / (1.0 + alpha)) <= 1e-12 and abs(s0 - 0.5) <= 1e-12
    return rows


def width_counterexample(center=0.0, slope=1.0, height=1.0) -> Network:
    """``height - slope (ReLU(x - center) + ReLU(center - x))``: width 2 on a 1-D input."""
    return Network(
        [Layer([[1.0], [-1.0]], [-center, center])],
        [[-slope, -slope]],
        [height],
    )

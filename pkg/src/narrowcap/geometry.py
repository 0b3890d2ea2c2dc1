"""Geometric primitives and certificate search.

Compact sets are represented by finite sample clouds.  Every containment
or separation claim made here is certified on the samples only.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError, cKDTree

from narrowcap.config import get_tol
from narrowcap.errors import ConeSearchFailed, NoSector, NoSeparation


@dataclass(frozen=True)
class PointCloud:
    """Finite sample of a compact set, one point per row."""

    points: np.ndarray
    allow_empty: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1) if pts.size else pts.reshape(0, 0)
        if pts.ndim != 2:
            raise ValueError(f"points must be a 2-D array, got shape {pts.shape}")
        if pts.shape[0] == 0 and not self.allow_empty:
            raise ValueError("point cloud is empty")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def __iter__(self):
        return iter(self.points)

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def union(self, *others: "PointCloud") -> "PointCloud":
        return PointCloud(np.vstack([self.points] + [o.points for o in others]))

    # -- IO -----------------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        for p in self.points:
            writer.writerow([repr(float(c)) for c in p])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "PointCloud":
        rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
        try:
            data = [[float(c) for c in r] for r in rows]
        except ValueError:
            # tolerate a single header line
            data = [[float(c) for c in r] for r in rows[1:]]
        widths = {len(r) for r in data}
        if len(widths) > 1:
            raise ValueError(f"ragged CSV rows: widths {sorted(widths)}")
        return cls(np.array(data, dtype=float))

    def to_json(self) -> str:
        return json.dumps(self.points.tolist())

    @classmethod
    def from_json(cls, text: str) -> "PointCloud":
        return cls(np.array(json.loads(text), dtype=float))


def as_cloud(obj) -> PointCloud:
    return obj if isinstance(obj, PointCloud) else PointCloud(obj)


@dataclass(frozen=True)
class HyperplaneCertificate:
    """Unit normal ``v`` and offset ``q``: ``v.x > q`` on A, ``v.x < q`` on B."""

    normal: np.ndarray
    offset: float
    margin: float

    def side(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.normal - self.offset


@dataclass(frozen=True)
class SectorCertificate:
    """Open cone ``{apex + V lam : lam > 0}`` holding K1 and avoiding K2."""

    apex: np.ndarray
    frame: np.ndarray

    def coordinates(self, x) -> np.ndarray:
        """Frame coordinates ``V^-1 (x - c)``, one row per point."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.linalg.solve(self.frame, (x - self.apex).T).T


@dataclass(frozen=True)
class ConeFrame:
    delta: float
    scale: float
    frame: np.ndarray
    frame_inverse: np.ndarray


@dataclass
class ContainmentReport:
    ok: bool
    k1_violations: list = field(default_factory=list)
    k2_violations: list = field(default_factory=list)

    def __bool__(self):
        return self.ok


def householder_to_minus_e1(v) -> np.ndarray:
    """Orthogonal ``Q`` with ``Q v = -e1``.

    A Householder reflection, composed with a sign flip of the first axis
    when ``v`` already points into the negative half space (avoids the
    cancellation in ``v + e1``).
    """
    v = np.asarray(v, dtype=float).ravel()
    n = v.size
    if n == 0 or abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ValueError("householder_to_minus_e1 needs a unit vector")
    e1 = np.zeros(n)
    e1[0] = 1.0
    if v[0] > 0:
        u = v + e1
        return np.eye(n) - 2.0 * np.outer(u, u) / (u @ u)
    u = v - e1
    uu = u @ u
    h = np.eye(n) if uu == 0.0 else np.eye(n) - 2.0 * np.outer(u, u) / uu
    flip = np.ones(n)
    flip[0] = -1.0
    return flip[:, None] * h


def find_separating_hyperplane(A, B, tol=None) -> HyperplaneCertificate:
    """Maximum-margin separating hyperplane via two linear programs.

    The first LP maximises the margin ``t`` over ``|v|_inf <= 1``.  The
    second fixes that margin and minimises ``|v|_1``, which makes the answer
    canonical when the first optimum is degenerate.
    """
    A, B = as_cloud(A), as_cloud(B)
    if A.dim != B.dim:
        raise ValueError(f"dimension mismatch: {A.dim} vs {B.dim}")
    tol = get_tol() if tol is None else tol
    n = A.dim
    Pa, Pb = A.points, B.points
    scale = 1.0 + max(np.abs(Pa).max(), np.abs(Pb).max())

    # z = (v, q, t)
    rows = np.vstack([
        np.hstack([-Pa, np.ones((len(Pa), 1)), np.ones((len(Pa), 1))]),
        np.hstack([Pb, -np.ones((len(Pb), 1)), np.ones((len(Pb), 1))]),
    ])
    rhs = np.zeros(len(rows))
    bounds = [(-1.0, 1.0)] * n + [(None, None), (None, None)]
    c = np.zeros(n + 2)
    c[-1] = -1.0
    res = linprog(c, A_ub=rows, b_ub=rhs, bounds=bounds, method="highs")
    if res.status != 0:
        raise NoSeparation(f"margin LP failed: {res.message}")
    t_star = -res.fun
    if t_star <= tol * scale:
        raise NoSeparation(
            f"no strictly separating hyperplane (best margin {t_star:.3g})",
            witness=_overlap_witness(Pa, Pb),
        )

    # z = (v, q, t, s) with s >= |v|
    t_floor = t_star * (1.0 - 1e-7)
    m = len(rows)
    rows2 = np.hstack([rows, np.zeros((m, n))])
    rows2 = np.vstack([
        rows2,
        np.hstack([np.eye(n), np.zeros((n, 2)), -np.eye(n)]),
        np.hstack([-np.eye(n), np.zeros((n, 2)), -np.eye(n)]),
    ])
    rhs2 = np.zeros(len(rows2))
    bounds2 = [(-1.0, 1.0)] * n + [(None, None), (t_floor, None)] + [(0.0, None)] * n
    c2 = np.concatenate([np.zeros(n + 2), np.ones(n)])
    res2 = linprog(c2, A_ub=rows2, b_ub=rhs2, bounds=bounds2, method="highs")
    z = res2.x if res2.status == 0 else res.x
    v, q = z[:n], z[n]

    norm = np.linalg.norm(v)
    v, q = v / norm, q / norm
    sa = Pa @ v - q
    sb = Pb @ v - q
    if sa.min() <= 0 or sb.max() >= 0:
        raise NoSeparation("LP solution failed pointwise verification")
    margin = float(min(sa.min(), -sb.max()))
    return HyperplaneCertificate(normal=v, offset=float(q), margin=margin)


def _overlap_witness(Pa, Pb):
    """Point of (approximately) conv(A) ∩ conv(B) from an L1 LP."""
    na, nb, n = len(Pa), len(Pb), Pa.shape[1]
    # z = (lam, mu, e); minimise sum e with |Pa^T lam - Pb^T mu| <= e
    c = np.concatenate([np.zeros(na + nb), np.ones(n)])
    diff = np.hstack([Pa.T, -Pb.T])
    A_ub = np.vstack([
        np.hstack([diff, -np.eye(n)]),
        np.hstack([-diff, -np.eye(n)]),
    ])
    b_ub = np.zeros(2 * n)
    A_eq = np.zeros((2, na + nb + n))
    A_eq[0, :na] = 1.0
    A_eq[1, na:na + nb] = 1.0
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0, 1.0],
                  bounds=[(0, None)] * (na + nb + n), method="highs")
    if res.status != 0:
        return None
    return Pa.T @ res.x[:na]


def check_sector_containment(cert: SectorCertificate, K1, K2, tol=0.0) -> ContainmentReport:
    """Verify the sector invariants on every sample.

    K1 points need all frame coordinates ``> tol``; K2 points need at least
    one coordinate ``<= -tol`` (``tol = 0`` gives the plain ``<= 0`` rule).
    """
    K1, K2 = as_cloud(K1), as_cloud(K2)
    n = cert.apex.size
    if K1.dim != n or K2.dim != n:
        raise ValueError("certificate and clouds disagree on dimension")
    lam1 = cert.coordinates(K1.points)
    lam2 = cert.coordinates(K2.points)
    bad1 = np.flatnonzero(~np.all(lam1 > tol, axis=1))
    bad2 = np.flatnonzero(~np.any(lam2 <= -tol, axis=1))
    return ContainmentReport(
        ok=bad1.size == 0 and bad2.size == 0,
        k1_violations=[K1.points[i].copy() for i in bad1],
        k2_violations=[K2.points[i].copy() for i in bad2],
    )


def _frame_is_invertible(V) -> bool:
    cols = V / np.linalg.norm(V, axis=0)
    return abs(np.linalg.det(cols)) > 1e-10


def _simplex_directions(n):
    """n unit vectors in R^(n-1) summing to zero (regular simplex)."""
    if n == 1:
        return np.zeros((1, 0))
    centred = np.eye(n) - 1.0 / n
    # orthonormal basis of the sum-zero hyperplane
    q, _ = np.linalg.qr(centred[:, : n - 1])
    s = centred @ q
    return s / np.linalg.norm(s, axis=1, keepdims=True)


def _random_orthogonal(k, rng):
    if k == 0:
        return np.zeros((0, 0))
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    return q * np.sign(np.diag(r))


def _tight_cone_rows(dirs, axis, simplex, rotation, kappa_cap=1e3):
    """Rows of ``V^-1`` for a simplicial cone around ``axis``.

    Rows are ``axis + kappa * p_i`` with ``p_i`` a rotated regular simplex
    in the orthogonal complement; kappa is pushed as high (cone as narrow)
    as the K1 directions allow.
    """
    n = axis.size
    if n == 1:
        return axis.reshape(1, 1)
    Q = householder_to_minus_e1(axis)
    complement = Q.T[:, 1:]          # columns orthonormal, orthogonal to axis
    p = complement @ rotation @ simplex.T  # n x n, column i = p_i
    alpha = dirs @ axis
    if np.any(alpha <= 0):
        return None
    perp = dirs - np.outer(alpha, axis)
    proj = perp @ p                  # (m, n): p_i . perp_d
    with np.errstate(divide="ignore", invalid="ignore"):
        limits = np.where(proj < 0, alpha[:, None] / -proj, np.inf)
    kappa = min(kappa_cap, 0.9 * float(limits.min()))
    if not kappa > 0:
        return None
    return axis[None, :] + kappa * p.T


def _hull_vertices(P):
    """Extreme points of a cloud (all points when the hull is degenerate or costly)."""
    n = P.shape[1]
    if len(P) <= 4 * (n + 1) or n > 4:
        return P
    try:
        return P[ConvexHull(P).vertices]
    except QhullError:
        return P


def _facet_cover(P1, P2, order, tol, max_grow=10):
    """Cover K2 by at most ``n`` half-spaces that each avoid K1.

    A simplicial sector is exactly the intersection of ``n`` half-spaces
    with independent normals, so it suffices to split K2 into ``n`` groups
    each linearly separable from K1.  Groups are grown greedily: seed with
    the first uncovered point in ``order``, separate it from K1 by an LP and
    absorb every uncovered point the plane already excludes.
    """
    n = P1.shape[1]
    rows, offsets = [], []
    covered = np.zeros(len(P2), dtype=bool)
    for facet in range(n):
        todo = order[~covered[order]]
        if todo.size == 0:
            break
        if facet == n - 1:
            group = np.zeros(len(P2), dtype=bool)
            group[todo] = True
        else:
            group = np.zeros(len(P2), dtype=bool)
            group[todo[0]] = True
        cert = None
        for _ in range(max_grow):
            try:
                cert = find_separating_hyperplane(P1, _hull_vertices(P2[group]), tol=tol)
            except NoSeparation:
                return None
            newly = ~covered & ~group & (P2 @ cert.normal < cert.offset)
            if not newly.any():
                break
            group |= newly
        rows.append(cert.normal)
        offsets.append(cert.offset)
        covered |= group | (P2 @ cert.normal < cert.offset)
    if not covered.all():
        return None
    # pad with half-spaces that contain all of K1, normals completing a basis
    if len(rows) < n:
        R = np.array(rows).reshape(-1, n)
        _, _, vt = np.linalg.svd(R, full_matrices=True) if len(R) else (None, None, np.eye(n))
        for w in vt[len(rows):]:
            proj = P1 @ w
            rows.append(w)
            offsets.append(float(proj.min() - 1.0 - (proj.max() - proj.min())))
    R = np.array(rows)
    beta = np.array(offsets)
    try:
        V = np.linalg.inv(R)
    except np.linalg.LinAlgError:
        return None
    return V @ beta, V


def find_sector_certificate(K1, K2, seed=0, budget=200, tol=None) -> SectorCertificate:
    """Randomized multi-start search for a sector certificate.

    The first candidate puts the apex at the midpoint of the two centroids
    with an axis-aligned orthant frame.  Next come facet covers of K2
    (nearest-first, then random seed orders).  Remaining starts place the
    apex behind K1 along a random direction, at a random multiple of K1's
    radius, and fit the narrowest simplicial cone around the K1 directions.
    """
    K1, K2 = as_cloud(K1), as_cloud(K2)
    if K1.dim != K2.dim:
        raise ValueError("dimension mismatch")
    tol = get_tol() if tol is None else tol
    n = K1.dim
    rng = np.random.default_rng(seed)
    c1, c2 = K1.centroid(), K2.centroid()

    def accept(apex, V):
        if not np.all(np.isfinite(V)) or not _frame_is_invertible(V):
            return None
        V = V / np.linalg.norm(V, axis=0)
        cert = SectorCertificate(apex=np.asarray(apex, dtype=float), frame=V)
        if check_sector_containment(cert, K1, K2, tol=tol):
            return cert
        return None

    mid = 0.5 * (c1 + c2)
    signs = np.sign(c1 - mid)
    if np.all(signs != 0):
        cert = accept(mid, np.diag(signs))
        if cert is not None:
            return cert

    P1 = _hull_vertices(K1.points)
    dist = np.linalg.norm(K2.points - c1, axis=1)
    orders = [np.argsort(dist, kind="stable")]
    orders += [rng.permutation(len(K2)) for _ in range(max(0, min(budget // 10, 20) - 1))]
    for order in orders:
        found = _facet_cover(P1, K2.points, order, tol)
        if found is not None:
            cert = accept(*found)
            if cert is not None:
                return cert
    budget -= len(orders)

    radius = float(np.linalg.norm(K1.points - c1, axis=1).max())
    spread = float(np.linalg.norm(c1 - c2))
    base = radius if radius > 0 else max(spread, 1.0) * 1e-2
    simplex = _simplex_directions(n)
    for _ in range(budget):
        u = rng.standard_normal(n)
        u /= np.linalg.norm(u)
        rho = np.exp(rng.uniform(np.log(1.05), np.log(200.0)))
        apex = c1 - rho * base * u
        d = K1.points - apex
        lens = np.linalg.norm(d, axis=1)
        if np.any(lens <= tol):
            continue
        dirs = d / lens[:, None]
        axis = dirs.mean(axis=0)
        axis /= np.linalg.norm(axis)
        rows = _tight_cone_rows(dirs, axis, simplex, _random_orthogonal(n - 1, rng))
        if rows is None:
            continue
        try:
            V = np.linalg.inv(rows)
        except np.linalg.LinAlgError:
            continue
        cert = accept(apex, V)
        if cert is not None:
            return cert
    raise NoSector(f"no sector certificate found in {budget} starts (not a proof of absence)")


def cone_frame_matrix(n, delta, scale) -> np.ndarray:
    """Columns ``-u_j - delta e1`` with ``u_j = s e_{j+1}``, ``u_n = -s sum e_k``."""
    B = np.zeros((n, n))
    B[0, :] = -delta
    for j in range(n - 1):
        B[j + 1, j] = -scale
    B[1:, n - 1] = scale
    return B


def build_cone_frame(K1, M1, delta=1.0, max_ratio_exp=20, tol=None) -> ConeFrame:
    """Cone frame with K1 in S- and M1 in S+ (strict positivity on samples).

    The ratio ``scale/delta`` doubles from 1 up to ``2**max_ratio_exp``.
    """
    K1, M1 = as_cloud(K1), as_cloud(M1)
    tol = get_tol() if tol is None else tol
    if K1.dim != M1.dim:
        raise ValueError("dimension mismatch")
    if np.any(K1.points[:, 0] >= 0):
        raise ValueError("every K1 point needs a negative first component")
    if np.any(M1.points[:, 0] <= 0):
        raise ValueError("every M1 point needs a positive first component")
    n = K1.dim
    for k in range(max_ratio_exp + 1):
        scale = delta * 2.0 ** k
        B = cone_frame_matrix(n, delta, scale)
        Binv = np.linalg.inv(B)
        lam_k = K1.points @ Binv.T
        lam_m = -M1.points @ Binv.T
        if lam_k.min() > tol and lam_m.min() > tol:
            return ConeFrame(delta=delta, scale=scale, frame=B, frame_inverse=Binv)
    raise ConeSearchFailed(
        f"no scale/delta ratio up to 2**{max_ratio_exp} certifies cone containment"
    )


def projection_injectivity_check(M, basis, shift=None, tol=None) -> bool:
    """True iff orthogonal projection of ``M + shift`` onto span(basis) is injective."""
    M = as_cloud(M)
    tol = get_tol() if tol is None else tol
    U = np.atleast_2d(np.asarray(basis, dtype=float))
    if U.shape[1] != M.dim:
        raise ValueError("basis vectors must live in the cloud's space")
    if U.shape[0] >= M.dim:
        raise ValueError("subspace dimension must be below the ambient dimension")
    sv = np.linalg.svd(U, compute_uv=False)
    if sv.min() <= 1e-12 * max(1.0, sv.max()):
        raise ValueError("basis vectors are linearly dependent")
    q, _ = np.linalg.qr(U.T)
    b = np.zeros(M.dim) if shift is None else np.asarray(shift, dtype=float)
    coords = (M.points + b) @ q
    if len(coords) < 2:
        return True
    dist, _ = cKDTree(coords).query(coords, k=2)
    return bool(dist[:, 1].min() > tol)


@dataclass(frozen=True)
class LabeledDataset:
    """Samples with real-valued targets; CSV rows are ``x_1, ..., x_d, target``."""

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        lab = np.asarray(self.labels, dtype=float).reshape(-1)
        if pts.ndim != 2 or pts.shape[0] != lab.size:
            raise ValueError(f"{pts.shape} points vs {lab.size} labels")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.labels.size

    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def cloud(self, label) -> PointCloud:
        return PointCloud(self.points[self.labels == label])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"x{i + 1}" for i in range(self.dim)] + ["label"])
        for p, y in zip(self.points, self.labels):
            writer.writerow([repr(float(c)) for c in p] + [repr(float(y))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "LabeledDataset":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if rows and rows[0] and rows[0][0].strip().startswith("x"):
            rows = rows[1:]
        arr = np.array([[float(c) for c in r] for r in rows], dtype=float)
        return cls(arr[:, :-1], arr[:, -1])

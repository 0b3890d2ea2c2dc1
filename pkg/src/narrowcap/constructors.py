"""Weight synthesis for narrow ReLU networks.

Each constructor returns a :class:`~narrowcap.network.Network` whose width
never exceeds the input dimension (``finite_exact_fit`` uses width 2).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from narrowcap.config import get_tol
from narrowcap.errors import NarrowcapError, NoSeparation
from narrowcap.geometry import (
    HyperplaneCertificate,
    PointCloud,
    as_cloud,
    build_cone_frame,
    check_sector_containment,
    find_separating_hyperplane,
    householder_to_minus_e1,
    projection_injectivity_check,
)
from narrowcap.network import RELU, Layer, Network, compose

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CollapseResult:
    network: Network
    collapsed_point: np.ndarray
    epsilon: float
    nearest: np.ndarray
    hyperplane: HyperplaneCertificate


def collapse_to_point(K, M, eps, hyperplane=None, tol=None) -> CollapseResult:
    """Two-stage ReLU map sending all of K to one point and fixing M.

    ``eps`` is capped at the K-to-M gap along the normal so the shifted
    hyperplane still separates; the effective value is reported.
    """
    K, M = as_cloud(K), as_cloud(M)
    if not eps > 0:
        raise ValueError("eps must be positive")
    tol = get_tol() if tol is None else tol
    hp = hyperplane if hyperplane is not None else find_separating_hyperplane(K, M)
    v = np.asarray(hp.normal, dtype=float)
    v = v / np.linalg.norm(v)
    sk = K.points @ v
    sm = M.points @ v
    i_near = int(np.argmin(sk))
    a = K.points[i_near]
    gap = sk[i_near] - sm.max()
    if gap <= 0:
        raise NoSeparation("hyperplane does not separate K from M")
    eps = min(float(eps), float(gap))
    a_tilde = a - 0.5 * eps * v

    V1 = householder_to_minus_e1(v)
    K1 = (K.points - a_tilde) @ V1.T
    M1 = (M.points - a_tilde) @ V1.T
    frame = build_cone_frame(K1, M1, tol=tol)
    V2 = -frame.frame_inverse            # maps -u_j - delta e1 to -e_j
    W = V2 @ V1
    hidden = Layer(W, -W @ a_tilde, RELU)
    final_w = V1.T @ (-frame.frame)       # (V2 V1)^-1 = V1^T V2^-1
    net = Network([hidden], final_w, a_tilde)
    return CollapseResult(network=net, collapsed_point=a_tilde, epsilon=eps,
                          nearest=a.copy(), hyperplane=hp)


def _readout(u1, u2, a1, a2):
    """Affine ``w.x + b`` with value a1 at u1 and a2 at u2."""
    d = u1 - u2
    w = (a1 - a2) * d / (d @ d)
    return w.reshape(1, -1), np.array([a1 - w @ u1])


def two_class_exact_fit(K1, K2, cert, a1, a2, tol=None) -> Network:
    """Depth-4 ReLU network equal to a1 on K1 and a2 on K2.

    Stage 1 ``ReLU(-V^-1 (x - c))`` sends K1 to 0 and K2 into the closed
    positive orthant minus the origin.  Two collapses then separate the
    two images into distinct points and a scalar readout is attached.
    """
    K1, K2 = as_cloud(K1), as_cloud(K2)
    tol = get_tol() if tol is None else tol
    if not (np.isfinite(a1) and np.isfinite(a2)):
        raise ValueError("target values must be finite")
    if not check_sector_containment(cert, K1, K2):
        raise NarrowcapError("sector certificate does not hold on the samples")
    n = K1.dim
    Vinv = np.linalg.inv(cert.frame)
    stage1 = Network([Layer(-Vinv, Vinv @ cert.apex, RELU)], np.eye(n), np.zeros(n))

    img1 = stage1.forward(K1.points)
    img2 = stage1.forward(K2.points)
    sums = img2.sum(axis=1)
    if sums.min() <= 0 or np.abs(img1).max() > 0:
        raise NarrowcapError("images after the first stage are not separated for any q > 0")
    q = 0.5 * sums.min()
    ones = np.ones(n) / np.sqrt(n)
    hp = HyperplaneCertificate(normal=ones, offset=q / np.sqrt(n),
                               margin=float(min(q, sums.min() - q)) / np.sqrt(n))

    origin = PointCloud(np.zeros((1, n)))
    first = collapse_to_point(PointCloud(img2), origin, sums.min() / np.sqrt(n),
                              hyperplane=hp, tol=tol)
    u2 = first.collapsed_point
    # the origin (image of K1) is collapsed against u2, completing the depth-4 form
    second = collapse_to_point(origin, PointCloud(u2[None, :]), 0.5 * np.linalg.norm(u2), tol=tol)
    body = compose(second.network, compose(first.network, stage1))

    v1 = body.forward(K1.points[:1])[0]
    v2 = body.forward(K2.points[:1])[0]
    if np.allclose(v1, v2, rtol=0, atol=0):
        raise NarrowcapError("collapsed images coincide")
    if a1 == a2:
        w, b = np.zeros((1, n)), np.array([float(a1)])
    else:
        w, b = _readout(v1, v2, float(a1), float(a2))
    return body.then_affine(w, b)


def finite_exact_fit(points, values, seed=0, tries=16) -> Network:
    """Width-2 ReLU network interpolating ``values`` at ``points``.

    Points are projected onto a generic line; the piecewise linear
    interpolant through the sorted projections is realised with one carry
    channel ``ReLU(t - t_k)`` (updated by subtracting the next gap) and one
    accumulator channel shifted to stay positive on the samples.
    """
    P = as_cloud(points)
    y = np.asarray(values, dtype=float).reshape(-1)
    if y.size != len(P):
        raise ValueError(f"{len(P)} points but {y.size} values")
    m, n = len(P), P.dim
    if m == 1:
        return Network.affine(np.zeros((1, n)), y[:1])
    X = P.points
    if len(np.unique(X, axis=0)) < m:
        raise ValueError("points are not pairwise distinct")
    if n == 1:
        direction = np.ones(1)
    else:
        rng = np.random.default_rng(seed)
        best, best_gap = None, -1.0
        for _ in range(tries):
            d = rng.standard_normal(n)
            d /= np.linalg.norm(d)
            if not projection_injectivity_check(P, d[None, :]):
                continue
            gap = np.diff(np.sort(X @ d)).min()
            if gap > best_gap:
                best, best_gap = d, gap
        if best is None:
            raise NarrowcapError("no injective projection direction found")
        direction = best

    t = X @ direction
    order = np.argsort(t)
    ts, ys = t[order], y[order]
    slopes = np.diff(ys) / np.diff(ts)
    if m == 2:
        w = slopes[0] * direction
        return Network.affine(w.reshape(1, -1), np.array([ys[0] - slopes[0] * ts[0]]))

    kinks = np.diff(slopes)             # slope change at t_2 .. t_{m-1}
    # accumulator values on every sample after each stage: A_1, ..., A_{m-2}
    relu = lambda z: np.maximum(z, 0.0)
    partial = ys[0] + slopes[0] * (ts - ts[0])
    mins = [partial.min()]
    for k in range(m - 3):
        partial = partial + kinks[k] * relu(ts - ts[k + 1])
        mins.append(partial.min())
    C = max(0.0, -min(mins)) + 1.0

    layers = [Layer(
        np.vstack([direction, slopes[0] * direction]),
        np.array([-ts[1], C + ys[0] - slopes[0] * ts[0]]),
        RELU,
    )]
    # hidden layer j: (c_j, A_{j-1}) -> (c_{j+1}, A_j)
    for j in range(2, m - 1):
        gap = ts[j] - ts[j - 1]
        layers.append(Layer(
            np.array([[1.0, 0.0], [kinks[j - 2], 1.0]]),
            np.array([-gap, 0.0]),
            RELU,
        ))
    final_w = np.array([[kinks[m - 3], 1.0]])
    return Network(layers, final_w, np.array([-C]))


def multi_class_exact_fit(components, eps=None, shrink=0.5, max_rounds=30, seed=0, tol=None) -> Network:
    """ReLU network constant on each component, by sequential collapses.

    ``components`` is a list of ``(cloud, value)``.  Every component that is
    linearly separable from the union of the others is collapsed to a point
    while everything else is held fixed; if a later separation fails because
    an earlier collapsed point drifted too far, the pipeline restarts with a
    smaller ``eps``.  Components without such a hyperplane (for instance the
    middle one of three collinear clusters) are passed on uncollapsed, and a
    width-2 finite fit through the collapsed points and the remaining raw
    samples finishes the job.
    """
    clouds = [as_cloud(c) for c, _ in components]
    values = [float(v) for _, v in components]
    if not clouds:
        raise ValueError("no components")
    n = clouds[0].dim
    if n < 2:
        raise ValueError("multi-class fit needs dimension >= 2")
    if any(c.dim != n for c in clouds):
        raise ValueError("components disagree on dimension")
    tol = get_tol() if tol is None else tol
    if len(clouds) == 1:
        return Network.affine(np.zeros((1, n)), [values[0]])
    _check_disjoint(clouds)

    margins, collapsible = [], []
    for j, K in enumerate(clouds):
        rest = PointCloud(np.vstack([c.points for i, c in enumerate(clouds) if i != j]))
        try:
            margins.append(find_separating_hyperplane(K, rest, tol=tol).margin)
            collapsible.append(j)
        except NoSeparation:
            log.info("component %d is not separable from the rest; kept uncollapsed", j)
    if eps is None:
        eps = min(margins) if margins else 1.0

    for _ in range(max_rounds):
        try:
            body, reps = _sequential_collapse(clouds, collapsible, eps, tol)
        except NoSeparation:
            eps *= shrink
            continue
        pts, vals = [], []
        for j in range(len(clouds)):
            if j in collapsible:
                pts.append(reps[j][None, :])
                vals.append([values[j]])
            else:
                img = _dedupe(body.forward(clouds[j].points))
                pts.append(img)
                vals.append(np.full(len(img), values[j]))
        pts = np.vstack(pts)
        if len(_dedupe(pts)) < len(pts):
            eps *= shrink
            continue
        tail = finite_exact_fit(PointCloud(pts), np.concatenate(vals), seed=seed)
        return compose(tail, body)
    raise NarrowcapError(f"epsilon schedule exhausted after {max_rounds} rounds")


def _check_disjoint(clouds):
    owner = {}
    for j, c in enumerate(clouds):
        for p in _dedupe(c.points):
            key = p.tobytes()
            if owner.setdefault(key, j) != j:
                raise NoSeparation(f"components {owner[key]} and {j} share a point", witness=p.copy())


def _sequential_collapse(clouds, collapsible, eps, tol):
    n = clouds[0].dim
    body = Network.identity(n)
    current = [c.points.copy() for c in clouds]
    for j in collapsible:
        rest = np.vstack([_dedupe(current[i]) for i in range(len(clouds)) if i != j])
        res = collapse_to_point(PointCloud(current[j]), PointCloud(rest), eps, tol=tol)
        body = compose(res.network, body)
        current = [body.forward(c.points) for c in clouds]
    reps = {}
    for j in collapsible:
        cur = current[j]
        if not np.array_equal(cur, np.broadcast_to(cur[0], cur.shape)):
            raise NoSeparation(f"component {j} was not collapsed to a single point")
        reps[j] = cur[0]
    return body, reps


def _dedupe(points):
    return np.unique(points, axis=0)

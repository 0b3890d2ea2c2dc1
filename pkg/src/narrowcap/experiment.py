"""Ball-dataset experiment: data generation, a numpy MLP trainer, snapshots.

The trainer is plain minibatch Adam on the mean squared error with exact
backpropagation.  Parameters live in one flat vector; the per-epoch loop is
compiled with numba, and the vectorised numpy backprop in ``_FlatMLP`` is
kept as the reference used by ``gradient_check``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from narrowcap.errors import TrainingDiverged
from narrowcap.geometry import LabeledDataset
from narrowcap.network import Activation, Layer, Network

log = logging.getLogger(__name__)

BORDER_CENTERS = (
    (0.25, 0.25), (0.5, 0.25), (0.75, 0.25),
    (0.25, 0.5), (0.75, 0.5),
    (0.25, 0.75), (0.5, 0.75), (0.75, 0.75),
)
# two centres dropped to leave an opening toward the centre ball
SIX_BALL_CENTERS = tuple(c for c in BORDER_CENTERS if c not in ((0.75, 0.5), (0.5, 0.75)))

BORDER_LABEL = 0.0
CENTER_LABEL = 1.0


@dataclass(frozen=True)
class BallDatasetConfig:
    border_centers: tuple = SIX_BALL_CENTERS
    border_radius: float = 0.125
    center_point: tuple = (0.5, 0.5)
    center_radius: float = 0.01
    points_per_border_ball: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.border_radius <= 0 or self.center_radius <= 0:
            raise ValueError("radii must be positive")
        centers = [tuple(map(float, c)) for c in self.border_centers] + [tuple(map(float, self.center_point))]
        if len(set(centers)) != len(centers):
            raise ValueError("ball centres must be pairwise distinct")
        if self.points_per_border_ball < 1:
            raise ValueError("need at least one point per ball")

    @classmethod
    def preset(cls, balls: int, seed: int = 0, **kw) -> "BallDatasetConfig":
        if balls == 6:
            return cls(border_centers=SIX_BALL_CENTERS, seed=seed, **kw)
        if balls == 8:
            return cls(border_centers=BORDER_CENTERS, seed=seed, **kw)
        raise ValueError("presets exist for 6 and 8 border balls")


def _sample_disk(rng, center, radius, count):
    r = radius * np.sqrt(rng.uniform(0.0, 1.0, count))
    theta = rng.uniform(0.0, 2.0 * np.pi, count)
    return np.asarray(center, dtype=float) + np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def generate_ball_dataset(config: BallDatasetConfig) -> LabeledDataset:
    """Border balls labelled 0, one centre ball (as many points as all border balls) labelled 1."""
    rng = np.random.default_rng(config.seed)
    k = config.points_per_border_ball
    border = [_sample_disk(rng, c, config.border_radius, k) for c in config.border_centers]
    n_border = k * len(config.border_centers)
    center = _sample_disk(rng, config.center_point, config.center_radius, n_border)
    points = np.vstack(border + [center])
    labels = np.concatenate([np.full(n_border, BORDER_LABEL), np.full(n_border, CENTER_LABEL)])
    return LabeledDataset(points, labels)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 1e-3
    epochs: int = 500
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    hidden_widths: tuple = (2, 2, 2)
    activation: str = "relu"

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate <= 0:
            raise ValueError("batch size, epochs and learning rate must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1) or self.adam_eps <= 0:
            raise ValueError("invalid Adam hyperparameters")


@dataclass
class TrainHistory:
    per_epoch: list = field(default_factory=list)   # (epoch, mse, uuac)
    final: Network | None = None
    initial_mse: float = float("nan")
    initial_uuac: float = float("nan")

    def to_csv(self) -> str:
        lines = ["epoch,mse,uuac"]
        lines += [f"{e},{m!r},{u!r}" for e, m, u in self.per_epoch]
        return "\n".join(lines) + "\n"


class _FlatMLP:
    """Parameter vector plus shape bookkeeping for a scalar-output MLP."""

    def __init__(self, widths, activation):
        self.widths = list(widths)
        self.activation = activation
        self.shapes = [(self.widths[i + 1], self.widths[i]) for i in range(len(self.widths) - 1)]
        sizes = [r * c + r for r, c in self.shapes]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.theta = np.zeros(self.offsets[-1])

    def views(self, theta=None):
        theta = self.theta if theta is None else theta
        out = []
        for (r, c), o in zip(self.shapes, self.offsets[:-1]):
            W = theta[o:o + r * c].reshape(r, c)
            b = theta[o + r * c:o + r * c + r]
            out.append((W, b))
        return out

    def init_uniform(self, rng):
        for (W, b), (r, c) in zip(self.views(), self.shapes):
            bound = 1.0 / np.sqrt(c)
            W[...] = rng.uniform(-bound, bound, size=W.shape)
            b[...] = rng.uniform(-bound, bound, size=b.shape)

    @classmethod
    def from_network(cls, net: Network):
        acts = {l.activation for l in net.hidden_layers}
        if len(acts) > 1:
            raise ValueError("trainer supports one activation kind per network")
        act = acts.pop() if acts else Activation("identity")
        mlp = cls([net.input_dim] + net.widths, act)
        for (W, b), (Wn, bn, _) in zip(mlp.views(), net.layers):
            W[...] = Wn
            b[...] = bn
        return mlp

    def to_network(self, theta=None) -> Network:
        views = self.views(theta)
        hidden = [Layer(W.copy(), b.copy(), self.activation) for W, b in views[:-1]]
        W, b = views[-1]
        return Network(hidden, W.copy(), b.copy())

    def predict(self, X, theta=None):
        views = self.views(theta)
        h = X
        for W, b in views[:-1]:
            h = self.activation(h @ W.T + b)
        W, b = views[-1]
        return (h @ W.T + b)[:, 0]

    def loss_and_grad(self, X, y, theta=None):
        """MSE and its gradient with respect to the flat parameter vector."""
        theta = self.theta if theta is None else theta
        views = self.views(theta)
        act = self.activation
        hs, zs = [X], []
        h = X
        for W, b in views[:-1]:
            z = h @ W.T + b
            zs.append(z)
            h = act(z)
            hs.append(h)
        W, b = views[-1]
        out = (h @ W.T + b)[:, 0]
        resid = out - y
        loss = float(np.mean(resid * resid))
        grad = np.empty_like(theta)
        gviews = self.views(grad)
        delta = (2.0 / len(y)) * resid[:, None]
        for j in range(len(views) - 1, -1, -1):
            gW, gb = gviews[j]
            gW[...] = delta.T @ hs[j]
            gb[...] = delta.sum(axis=0)
            if j > 0:
                delta = (delta @ views[j][0]) * act.derivative(zs[j - 1])
        return loss, grad


_ACT_CODES = {"identity": 0, "relu": 1, "leaky_relu": 2, "tanh": 3, "sigmoid": 4, "cosine": 5}


@njit(cache=True)
def _logistic(z):
    if z >= 0.0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def _act(code, alpha, z):
    if code == 1:
        return z if z > 0.0 else 0.0
    if code == 2:
        return z if z >= 0.0 else alpha * z
    if code == 3:
        return np.tanh(z)
    if code == 4:
        return _logistic(z)
    if code == 5:
        return np.cos(z)
    return z


@njit(cache=True)
def _dact(code, alpha, z):
    if code == 1:
        return 1.0 if z > 0.0 else 0.0
    if code == 2:
        return 1.0 if z > 0.0 else alpha
    if code == 3:
        t = np.tanh(z)
        return 1.0 - t * t
    if code == 4:
        s = _logistic(z)
        return s * (1.0 - s)
    if code == 5:
        return -np.sin(z)
    return 1.0


@njit(cache=True)
def _batch_loss_grad(theta, X, y, idx, widths, offsets, code, alpha, grad):
    """MSE over the rows ``idx`` and its gradient, written into ``grad``."""
    n_layers = widths.size - 1
    wmax = widths.max()
    h = np.zeros((n_layers + 1, wmax))
    z = np.zeros((n_layers, wmax))
    delta = np.zeros(wmax)
    nxt = np.zeros(wmax)
    grad[:] = 0.0
    loss = 0.0
    bs = idx.size
    for i in idx:
        for k in range(widths[0]):
            h[0, k] = X[i, k]
        for l in range(n_layers):
            rows, cols = widths[l + 1], widths[l]
            o = offsets[l]
            for r in range(rows):
                acc = theta[o + rows * cols + r]
                for c in range(cols):
                    acc += theta[o + r * cols + c] * h[l, c]
                z[l, r] = acc
                h[l + 1, r] = acc if l == n_layers - 1 else _act(code, alpha, acc)
        resid = h[n_layers, 0] - y[i]
        loss += resid * resid
        delta[0] = 2.0 * resid / bs
        for l in range(n_layers - 1, -1, -1):
            rows, cols = widths[l + 1], widths[l]
            o = offsets[l]
            for r in range(rows):
                grad[o + rows * cols + r] += delta[r]
                for c in range(cols):
                    grad[o + r * cols + c] += delta[r] * h[l, c]
            if l > 0:
                for c in range(cols):
                    acc = 0.0
                    for r in range(rows):
                        acc += delta[r] * theta[o + r * cols + c]
                    nxt[c] = acc * _dact(code, alpha, z[l - 1, c])
                for c in range(cols):
                    delta[c] = nxt[c]
    return loss / bs


@njit(cache=True)
def _adam_epoch(theta, m, v, step, X, y, perm, batch, widths, offsets,
                code, alpha, lr, b1, b2, eps):
    """One epoch of minibatch Adam; returns the step count or -1 on a non-finite loss."""
    grad = np.zeros(theta.size)
    n = perm.size
    for start in range(0, n, batch):
        loss = _batch_loss_grad(theta, X, y, perm[start:min(start + batch, n)],
                                widths, offsets, code, alpha, grad)
        if not np.isfinite(loss):
            return -1
        step += 1
        c1 = 1.0 - b1 ** step
        c2 = 1.0 - b2 ** step
        for p in range(theta.size):
            g = grad[p]
            m[p] = b1 * m[p] + (1.0 - b1) * g
            v[p] = b2 * v[p] + (1.0 - b2) * g * g
            theta[p] -= lr * (m[p] / c1) / (np.sqrt(v[p] / c2) + eps)
    return step


def _kernel_args(mlp):
    return (np.array(mlp.widths, dtype=np.int64), mlp.offsets[:-1].astype(np.int64),
            _ACT_CODES[mlp.activation.kind], float(mlp.activation.alpha or 0.0))


def compiled_loss_and_grad(net: Network, data: LabeledDataset):
    """MSE and flat gradient from the compiled kernel the trainer uses."""
    mlp = _FlatMLP.from_network(net)
    widths, offsets, code, alpha = _kernel_args(mlp)
    grad = np.zeros_like(mlp.theta)
    idx = np.arange(len(data), dtype=np.int64)
    loss = _batch_loss_grad(mlp.theta, np.ascontiguousarray(data.points), data.labels, idx,
                            widths, offsets, code, alpha, grad)
    return loss, grad


def _metrics(mlp, X, y):
    err = mlp.predict(X) - y
    return float(np.mean(err * err)), float(np.abs(err).max())


def train(config: TrainConfig, data: LabeledDataset, init: Network | None = None) -> TrainHistory:
    """Minibatch Adam on the MSE; records MSE and UUAC after every epoch."""
    X, y = data.points, data.labels
    n0 = X.shape[1]
    if any(w > n0 for w in config.hidden_widths):
        warnings.warn(f"hidden widths {config.hidden_widths} exceed input dimension {n0}")
    rng = np.random.default_rng(config.seed)
    if init is None:
        mlp = _FlatMLP([n0, *config.hidden_widths, 1], Activation.parse(config.activation))
        mlp.init_uniform(rng)
    else:
        if init.input_dim != n0:
            raise ValueError("initial network does not match data dimension")
        mlp = _FlatMLP.from_network(init)

    b1, b2, lr, eps = config.adam_beta1, config.adam_beta2, config.learning_rate, config.adam_eps
    m = np.zeros_like(mlp.theta)
    v = np.zeros_like(mlp.theta)
    step = 0
    history = TrainHistory()
    history.initial_mse, history.initial_uuac = _metrics(mlp, X, y)
    widths, offsets, code, alpha = _kernel_args(mlp)
    Xc = np.ascontiguousarray(X)
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(len(y))
        step = _adam_epoch(mlp.theta, m, v, step, Xc, y, perm, config.batch_size,
                           widths, offsets, code, alpha, lr, b1, b2, eps)
        if step < 0:
            raise TrainingDiverged(f"non-finite loss during epoch {epoch}")
        mse, uuac = _metrics(mlp, X, y)
        if not np.isfinite(mse):
            raise TrainingDiverged(f"non-finite MSE after epoch {epoch}")
        history.per_epoch.append((epoch, mse, uuac))
        log.debug("epoch %d mse %.6g uuac %.6g", epoch, mse, uuac)
    history.final = mlp.to_network()
    return history


def gradient_check(net: Network, data: LabeledDataset, step=1e-6, kink_margin=1e-4) -> float:
    """Max relative difference between backprop and central differences.

    Samples whose piecewise-linear units sit within ``kink_margin`` of a
    kink are dropped first.  Both the numpy backprop and the compiled
    kernel used by ``train`` are checked; the worse of the two is returned.
    """
    mlp = _FlatMLP.from_network(net)
    X, y = data.points, data.labels
    if mlp.activation.kind in ("relu", "leaky_relu"):
        keep = np.ones(len(y), dtype=bool)
        for k in range(1, net.depth):
            keep &= np.all(np.abs(net.forward_prefix(k, X)) > kink_margin, axis=1)
        X, y = X[keep], y[keep]
        if len(y) == 0:
            raise ValueError("every sample lies near a ReLU kink")
    _, grad = mlp.loss_and_grad(X, y)
    _, kgrad = compiled_loss_and_grad(net, LabeledDataset(X, y))
    theta = mlp.theta.copy()
    worst = 0.0
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += step
        tm[i] -= step
        lp, _ = mlp.loss_and_grad(X, y, tp)
        lm, _ = mlp.loss_and_grad(X, y, tm)
        fd = (lp - lm) / (2.0 * step)
        for g in (grad[i], kgrad[i]):
            denom = max(abs(fd), abs(g), 1e-8)
            worst = max(worst, abs(fd - g) / denom)
    return worst


@dataclass
class Snapshot:
    label: str
    clouds: dict     # class label -> array of transformed points
    planar: bool = True


def layer_snapshots(net: Network, data: LabeledDataset) -> list[Snapshot]:
    """Data after every elementary map, starting with the raw input.

    For scalar-output networks on two-class data a final stage thresholds
    the output at the midpoint of the two class values.
    """
    classes = data.classes()
    stages = net.trace(data.points)
    out = []
    for label, values in stages:
        planar = values.shape[1] <= 2
        if not planar:
            log.warning("snapshot %r has %d dimensions; plots show the first two", label, values.shape[1])
        out.append(Snapshot(label, {float(c): values[data.labels == c] for c in classes}, planar))
    if net.output_dim == 1 and classes.size == 2:
        lo, hi = float(classes[0]), float(classes[1])
        final = stages[-1][1][:, 0]
        pred = np.where(final >= 0.5 * (lo + hi), hi, lo)[:, None]
        out.append(Snapshot("threshold", {float(c): pred[data.labels == c] for c in classes}, True))
    return out


def snapshots_to_dict(snaps) -> list:
    return [
        {"stage": s.label, "planar": s.planar,
         "classes": {repr(k): v.tolist() for k, v in s.clouds.items()}}
        for s in snaps
    ]

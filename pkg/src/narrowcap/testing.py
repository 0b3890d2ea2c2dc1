"""Random instance generators shared by the test suite and the acceptance run."""

import numpy as np

from narrowcap.geometry import PointCloud, SectorCertificate
from narrowcap.network import Activation, Layer, Network

MONOTONE_ACTIVATIONS = (
    Activation("relu"),
    Activation("leaky_relu", 0.1),
    Activation("tanh"),
    Activation("sigmoid"),
)


def random_narrow_network(rng, dim, max_hidden=5, activation=None, weight_scale=1.5, full_width=False):
    """Scalar-output network with every hidden width <= dim."""
    act = activation if activation is not None else MONOTONE_ACTIVATIONS[rng.integers(len(MONOTONE_ACTIVATIONS))]
    n_hidden = int(rng.integers(0, max_hidden + 1))
    layers = []
    prev = dim
    for _ in range(n_hidden):
        width = dim if full_width else int(rng.integers(1, dim + 1))
        W = rng.normal(0.0, weight_scale / np.sqrt(prev), size=(width, prev))
        b = rng.normal(0.0, 0.5, size=width)
        layers.append(Layer(W, b, act))
        prev = width
    return Network(layers, rng.normal(0.0, 1.0, size=(1, prev)), rng.normal(0.0, 0.5, size=1))


def random_sector_instance(rng, dim, n1=30, n2=30):
    """Certificate first, then K1 samples inside the sector and K2 samples outside its closure."""
    apex = rng.normal(size=dim)
    while True:
        V = rng.normal(size=(dim, dim))
        if abs(np.linalg.det(V / np.linalg.norm(V, axis=0))) > 0.1:
            break
    cert = SectorCertificate(apex=apex, frame=V)
    lam1 = rng.uniform(0.1, 2.0, size=(n1, dim))
    lam2 = rng.uniform(-2.0, 2.0, size=(n2, dim))
    # force at least one clearly negative coordinate
    cols = rng.integers(dim, size=n2)
    lam2[np.arange(n2), cols] = rng.uniform(-2.0, -0.1, size=n2)
    K1 = PointCloud(apex + lam1 @ V.T)
    K2 = PointCloud(apex + lam2 @ V.T)
    return cert, K1, K2


def random_separable_clouds(rng, dim, n_k=20, n_m=20, gap=0.5):
    """Two Gaussian clouds on either side of a random hyperplane."""
    v = rng.normal(size=dim)
    v /= np.linalg.norm(v)
    q = rng.normal()
    K = rng.normal(size=(n_k, dim))
    M = rng.normal(size=(n_m, dim))
    K += np.outer(np.maximum(0, q + gap - K @ v) + rng.exponential(0.5, n_k), v)
    M -= np.outer(np.maximum(0, M @ v - q + gap) + rng.exponential(0.5, n_m), v)
    return PointCloud(K), PointCloud(M)

"""Synthesis, training and verification of narrow neural networks.

Networks here have width at most the input dimension.  The package builds
exact-fit ReLU networks from geometric certificates, fits width-one cosine
networks on finite sets, and checks the maximum principle on grids.
"""

from narrowcap.errors import (
    ConeSearchFailed,
    NarrowcapError,
    NoSector,
    NoSeparation,
    SearchBudgetExceeded,
    UnboundedLipschitz,
)
from narrowcap.geometry import PointCloud
from narrowcap.network import Activation, Layer, Network

__all__ = [
    "Activation",
    "ConeSearchFailed",
    "Layer",
    "NarrowcapError",
    "Network",
    "NoSector",
    "NoSeparation",
    "PointCloud",
    "SearchBudgetExceeded",
    "UnboundedLipschitz",
]

__version__ = "0.1.0"

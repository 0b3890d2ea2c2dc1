"""Layered networks ``F = W_L (A_{L-1} o ... o A_1) + b_L`` with ``A_j = act(W_j x + b_j)``."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from narrowcap.errors import NetworkFormatError, UnboundedLipschitz

ACTIVATION_KINDS = ("relu", "leaky_relu", "cosine", "tanh", "sigmoid", "identity", "step")


@dataclass(frozen=True)
class Activation:
    kind: str
    alpha: float | None = None

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.kind == "leaky_relu":
            if self.alpha is None or not self.alpha > 0:
                raise ValueError("leaky_relu needs alpha > 0")
        elif self.alpha is not None:
            raise ValueError(f"{self.kind} takes no alpha")

    @property
    def monotone(self) -> bool:
        return self.kind != "cosine"

    @property
    def lipschitz(self) -> float:
        if self.kind == "step":
            raise UnboundedLipschitz("step activation is discontinuous")
        if self.kind == "leaky_relu":
            return max(1.0, self.alpha)
        if self.kind == "sigmoid":
            return 0.25
        return 1.0

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        k = self.kind
        if k == "relu":
            return np.maximum(z, 0.0)
        if k == "leaky_relu":
            return np.where(z >= 0, z, self.alpha * z)
        if k == "cosine":
            return np.cos(z)
        if k == "tanh":
            return np.tanh(z)
        if k == "sigmoid":
            return expit(z)
        if k == "step":
            return (z >= 0).astype(float)
        return z.copy()

    def derivative(self, z):
        """Pointwise derivative; the ReLU subgradient at 0 is 0."""
        z = np.asarray(z, dtype=float)
        k = self.kind
        if k == "relu":
            return (z > 0).astype(float)
        if k == "leaky_relu":
            return np.where(z > 0, 1.0, self.alpha)
        if k == "cosine":
            return -np.sin(z)
        if k == "tanh":
            return 1.0 - np.tanh(z) ** 2
        if k == "sigmoid":
            s = expit(z)
            return s * (1.0 - s)
        if k == "step":
            return np.zeros_like(z)
        return np.ones_like(z)

    def interval(self, lo, hi):
        """Image bounds of ``[lo, hi]`` (elementwise)."""
        if self.monotone:
            return self(lo), self(hi)
        # cosine: extrema at multiples of pi inside the interval
        c_lo, c_hi = np.cos(lo), np.cos(hi)
        lower = np.minimum(c_lo, c_hi)
        upper = np.maximum(c_lo, c_hi)
        has_max = np.floor(hi / (2 * np.pi)) >= np.ceil(lo / (2 * np.pi))
        has_min = np.floor((hi - np.pi) / (2 * np.pi)) >= np.ceil((lo - np.pi) / (2 * np.pi))
        return np.where(has_min, -1.0, lower), np.where(has_max, 1.0, upper)

    @classmethod
    def parse(cls, name: str, alpha=None) -> "Activation":
        return cls(name.lower(), None if alpha is None else float(alpha))


RELU = Activation("relu")
IDENTITY = Activation("identity")
COSINE = Activation("cosine")


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = RELU

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, ndmin=2)
        b = np.array(self.bias, dtype=float).reshape(-1)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ValueError(f"layer shapes disagree: W {w.shape}, b {b.shape}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def width(self) -> int:
        return self.weights.shape[0]

    def affine(self, x):
        return x @ self.weights.T + self.bias

    def __eq__(self, other):
        return (
            isinstance(other, Layer)
            and self.activation == other.activation
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.bias, other.bias)
        )


class Network:
    """Immutable feed-forward network; depth counts the final affine layer."""

    def __init__(self, hidden_layers: Sequence[Layer], final_weights, final_bias):
        self.hidden_layers = tuple(hidden_layers)
        fw = np.array(final_weights, dtype=float, ndmin=2)
        fb = np.array(final_bias, dtype=float).reshape(-1)
        if fb.shape != (fw.shape[0],):
            raise ValueError(f"final shapes disagree: W {fw.shape}, b {fb.shape}")
        fw.setflags(write=False)
        fb.setflags(write=False)
        self.final_weights = fw
        self.final_bias = fb
        dims = [layer.weights for layer in self.hidden_layers] + [fw]
        for j in range(1, len(dims)):
            if dims[j].shape[1] != dims[j - 1].shape[0]:
                raise ValueError(
                    f"layer {j + 1} expects {dims[j].shape[1]} inputs, "
                    f"layer {j} produces {dims[j - 1].shape[0]}"
                )

    # -- constructors ---------------------------------------------------

    @classmethod
    def affine(cls, weights, bias) -> "Network":
        return cls((), weights, bias)

    @classmethod
    def identity(cls, n: int) -> "Network":
        return cls((), np.eye(n), np.zeros(n))

    # -- shape ----------------------------------------------------------

    @property
    def input_dim(self) -> int:
        first = self.hidden_layers[0].weights if self.hidden_layers else self.final_weights
        return first.shape[1]

    @property
    def output_dim(self) -> int:
        return self.final_weights.shape[0]

    @property
    def widths(self) -> list[int]:
        return [layer.width for layer in self.hidden_layers] + [self.output_dim]

    @property
    def width(self) -> int:
        return max(self.widths)

    @property
    def depth(self) -> int:
        return len(self.hidden_layers) + 1

    @property
    def layers(self):
        """All affine stages as ``(W, b, activation or None)``."""
        out = [(l.weights, l.bias, l.activation) for l in self.hidden_layers]
        out.append((self.final_weights, self.final_bias, None))
        return out

    # -- evaluation -----------------------------------------------------

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x.reshape(1, -1) if single else x
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ValueError(f"expected input of length {self.input_dim}, got shape {x.shape}")
        return X, single

    def forward(self, x) -> np.ndarray:
        """Evaluate on one point (1-D) or a batch (rows)."""
        X, single = self._check_input(x)
        h = X
        for layer in self.hidden_layers:
            h = layer.activation(layer.affine(h))
        out = h @ self.final_weights.T + self.final_bias
        return out[0] if single else out

    __call__ = forward

    def forward_prefix(self, k: int, x) -> np.ndarray:
        """Pre-activation value of layer ``k`` (1-based), ``1 <= k <= L-1``."""
        if not 1 <= k <= self.depth - 1:
            raise ValueError(f"prefix index {k} outside 1..{self.depth - 1}")
        X, single = self._check_input(x)
        h = X
        for layer in self.hidden_layers[: k - 1]:
            h = layer.activation(layer.affine(h))
        out = self.hidden_layers[k - 1].affine(h)
        return out[0] if single else out

    def trace(self, x):
        """Stage-by-stage values ``[(label, array), ...]`` starting with the input."""
        X, _ = self._check_input(x)
        stages = [("input", X)]
        h = X
        for j, layer in enumerate(self.hidden_layers, start=1):
            h = layer.affine(h)
            stages.append((f"affine{j}", h))
            h = layer.activation(h)
            stages.append((f"{layer.activation.kind}{j}", h))
        stages.append(("final affine", h @ self.final_weights.T + self.final_bias))
        return stages

    # -- algebra --------------------------------------------------------

    def negated(self) -> "Network":
        return Network(self.hidden_layers, -self.final_weights, -self.final_bias)

    def then_affine(self, weights, bias) -> "Network":
        """Post-compose with ``x -> weights x + bias`` folded into the final layer."""
        return compose(Network.affine(weights, bias), self)

    def lipschitz_bound(self) -> float:
        return lipschitz_bound(self)

    # -- comparison / IO --------------------------------------------------

    def __eq__(self, other):
        return (
            isinstance(other, Network)
            and self.hidden_layers == other.hidden_layers
            and np.array_equal(self.final_weights, other.final_weights)
            and np.array_equal(self.final_bias, other.final_bias)
        )

    def __repr__(self):
        chain = "-".join(str(w) for w in [self.input_dim] + self.widths)
        acts = ",".join(l.activation.kind for l in self.hidden_layers) or "affine"
        return f"Network({chain}, {acts})"

    def to_dict(self) -> dict:
        layers = []
        for l in self.hidden_layers:
            entry = {"w": _hex_matrix(l.weights), "b": _hex_vector(l.bias), "act": l.activation.kind}
            if l.activation.alpha is not None:
                entry["alpha"] = float(l.activation.alpha).hex()
            layers.append(entry)
        return {
            "layers": layers,
            "final_w": _hex_matrix(self.final_weights),
            "final_b": _hex_vector(self.final_bias),
        }

    @classmethod
    def from_dict(cls, doc) -> "Network":
        if not isinstance(doc, dict):
            raise NetworkFormatError("document must be a JSON object")
        for key in ("layers", "final_w", "final_b"):
            if key not in doc:
                raise NetworkFormatError("missing key", key)
        if not isinstance(doc["layers"], list):
            raise NetworkFormatError("must be a list", "layers")
        hidden = []
        prev = None
        for i, entry in enumerate(doc["layers"]):
            loc = f"layers[{i}]"
            if not isinstance(entry, dict):
                raise NetworkFormatError("must be an object", loc)
            w = _parse_matrix(entry.get("w"), f"{loc}.w")
            b = _parse_vector(entry.get("b"), f"{loc}.b")
            if b.size != w.shape[0]:
                raise NetworkFormatError(f"bias length {b.size} != {w.shape[0]} rows", f"{loc}.b")
            if prev is not None and w.shape[1] != prev:
                raise NetworkFormatError(f"expects {w.shape[1]} inputs, previous layer has {prev}", f"{loc}.w")
            try:
                act = Activation.parse(entry.get("act", ""), _parse_scalar(entry.get("alpha"), f"{loc}.alpha"))
            except ValueError as exc:
                raise NetworkFormatError(str(exc), f"{loc}.act") from None
            hidden.append(Layer(w, b, act))
            prev = w.shape[0]
        fw = _parse_matrix(doc["final_w"], "final_w")
        fb = _parse_vector(doc["final_b"], "final_b")
        if fb.size != fw.shape[0]:
            raise NetworkFormatError(f"bias length {fb.size} != {fw.shape[0]} rows", "final_b")
        if prev is not None and fw.shape[1] != prev:
            raise NetworkFormatError(f"expects {fw.shape[1]} inputs, previous layer has {prev}", "final_w")
        return cls(hidden, fw, fb)


def _hex_vector(v):
    return [float(x).hex() for x in v]


def _hex_matrix(m):
    return [_hex_vector(row) for row in m]


def _parse_scalar(value, loc):
    if value is None:
        return None
    if isinstance(value, bool):
        raise NetworkFormatError("expected a number", loc)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float.fromhex(value) if "0x" in value.lower() else float(value)
        except ValueError:
            pass
    raise NetworkFormatError(f"cannot parse {value!r} as a float", loc)


def _parse_vector(value, loc):
    if not isinstance(value, list):
        raise NetworkFormatError("expected a list of numbers", loc)
    return np.array([_parse_scalar(x, f"{loc}[{i}]") for i, x in enumerate(value)], dtype=float)


def _parse_matrix(value, loc):
    if not isinstance(value, list) or not value:
        raise NetworkFormatError("expected a non-empty list of rows", loc)
    rows = [_parse_vector(r, f"{loc}[{i}]") for i, r in enumerate(value)]
    width = rows[0].size
    for i, r in enumerate(rows):
        if r.size != width:
            raise NetworkFormatError(f"row has {r.size} entries, expected {width}", f"{loc}[{i}]")
    return np.vstack(rows)


def serialize(net: Network) -> bytes:
    return json.dumps(net.to_dict(), indent=1).encode("utf-8")


def deserialize(data) -> Network:
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"invalid JSON: {exc.msg}", f"line {exc.lineno} col {exc.colno}") from None
    return Network.from_dict(doc)


def forward(net: Network, x):
    return net.forward(x)


def forward_prefix(net: Network, k: int, x):
    return net.forward_prefix(k, x)


def compose(outer: Network, inner: Network) -> Network:
    """Network for ``outer o inner``; inner's final affine merges into outer's first stage."""
    if inner.output_dim != outer.input_dim:
        raise ValueError(f"cannot compose: inner outputs {inner.output_dim}, outer expects {outer.input_dim}")
    Wf, bf = inner.final_weights, inner.final_bias
    if outer.hidden_layers:
        first = outer.hidden_layers[0]
        merged = Layer(first.weights @ Wf, first.weights @ bf + first.bias, first.activation)
        return Network(inner.hidden_layers + (merged,) + outer.hidden_layers[1:],
                       outer.final_weights, outer.final_bias)
    return Network(inner.hidden_layers, outer.final_weights @ Wf,
                   outer.final_weights @ bf + outer.final_bias)


def lipschitz_bound(net: Network) -> float:
    """Product of spectral norms and activation Lipschitz constants (2-norm)."""
    bound = 1.0
    for layer in net.hidden_layers:
        bound *= np.linalg.norm(layer.weights, 2) * layer.activation.lipschitz
    return float(bound * np.linalg.norm(net.final_weights, 2))


def interval_bounds(net: Network, lo, hi):
    """Elementwise output bounds over boxes ``[lo, hi]`` (rows), by interval propagation."""
    lo = np.atleast_2d(np.asarray(lo, dtype=float))
    hi = np.atleast_2d(np.asarray(hi, dtype=float))
    mid, rad = 0.5 * (lo + hi), 0.5 * (hi - lo)
    for layer in net.hidden_layers:
        m = mid @ layer.weights.T + layer.bias
        r = rad @ np.abs(layer.weights).T
        a, b = layer.activation.interval(m - r, m + r)
        mid, rad = 0.5 * (a + b), 0.5 * (b - a)
    m = mid @ net.final_weights.T + net.final_bias
    r = rad @ np.abs(net.final_weights).T
    return m - r, m + r

"""Fully-connected network branch and its infinite-width kernel.

Weights are drawn as ``W ~ N(0, sigma_w2 / fan_in)`` and biases as
``b ~ N(0, sigma_b2)``, the scaling under which the outputs of a widening
network converge to a Gaussian process.  For ReLU networks the limiting
covariance has the closed-form arc-cosine recursion in
:func:`nngp_relu_kernel`.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch, UnsupportedActivation
from .linalg import make_rng

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpConfig:
    widths: tuple
    activation: str = "relu"
    sigma_w2: float = 2.0
    sigma_b2: float = 0.01
    trainable: str = "all"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("need at least input and output widths")
        if min(self.widths) < 1:
            raise ValueError("widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if not self.sigma_w2 > 0 or self.sigma_b2 < 0:
            raise ValueError("need sigma_w2 > 0 and sigma_b2 >= 0")
        if self.trainable not in ("all", "last"):
            raise ValueError("trainable must be 'all' or 'last'")

    @property
    def d_in(self):
        return self.widths[0]

    @property
    def p(self):
        return self.widths[-1]

    @property
    def n_layers(self):
        return len(self.widths) - 1

    def to_json(self):
        return {
            "widths": list(self.widths),
            "activation": self.activation,
            "sigma_w2": self.sigma_w2,
            "sigma_b2": self.sigma_b2,
            "trainable": self.trainable,
        }

    @classmethod
    def from_json(cls, doc):
        return cls(
            widths=doc["widths"],
            activation=doc.get("activation", "relu"),
            sigma_w2=float(doc.get("sigma_w2", 2.0)),
            sigma_b2=float(doc.get("sigma_b2", 0.01)),
            trainable=doc.get("trainable", "all"),
        )


@dataclass
class MlpParams:
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def flat(self):
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts += [W.ravel(), b.ravel()]
        return np.concatenate(parts)

    def load_flat(self, v):
        off = 0
        for W, b in zip(self.weights, self.biases):
            W[...] = v[off : off + W.size].reshape(W.shape)
            off += W.size
            b[...] = v[off : off + b.size]
            off += b.size
        if off != v.size:
            raise ShapeMismatch("flat vector length does not match network")

    @property
    def size(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def copy(self):
        return MlpParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self):
        return MlpParams([np.zeros_like(W) for W in self.weights], [np.zeros_like(b) for b in self.biases])


def mlp_init(config, rng):
    rng = make_rng(rng)
    Ws, bs = [], []
    for fan_in, fan_out in zip(config.widths[:-1], config.widths[1:]):
        Ws.append(rng.standard_normal((fan_out, fan_in)) * np.sqrt(config.sigma_w2 / fan_in))
        if config.sigma_b2 > 0:
            bs.append(rng.standard_normal(fan_out) * np.sqrt(config.sigma_b2))
        else:
            bs.append(np.zeros(fan_out))
    return MlpParams(Ws, bs)


def _act(name, u):
    if name == "relu":
        return np.maximum(u, 0.0)
    return np.tanh(u)


def _act_grad(name, u, a):
    if name == "relu":
        return (u > 0).astype(float)
    return 1.0 - a**2


def mlp_forward(params, config, x):
    """Outputs for one input vector (returns shape (p,)) or a batch (n, p)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    H = x[None, :] if single else x
    if H.ndim != 2 or H.shape[1] != config.d_in:
        raise ShapeMismatch(f"expected inputs of width {config.d_in}, got shape {x.shape}")
    pre, post = [], [H]
    last = config.n_layers - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        U = H @ W.T + b
        pre.append(U)
        H = U if l == last else _act(config.activation, U)
        post.append(H)
    cache = {"pre": pre, "post": post, "single": single}
    return (H[0] if single else H), cache


def mlp_backward(params, config, cache, dz):
    """Reverse-mode gradients of all weights and biases.

    Earlier layers come back as zeros when ``config.trainable == 'last'``.
    """
    dz = np.asarray(dz, dtype=float)
    if cache["single"]:
        dz = dz[None, :]
    out = cache["post"][-1]
    if dz.shape != out.shape:
        raise ShapeMismatch(f"dz shape {dz.shape} != output shape {out.shape}")
    grads = params.zeros_like()
    G = dz
    L = config.n_layers
    for l in range(L - 1, -1, -1):
        grads.weights[l][...] = G.T @ cache["post"][l]
        grads.biases[l][...] = G.sum(axis=0)
        if l == 0 or (config.trainable == "last" and l == L - 1):
            break
        G = (G @ params.weights[l]) * _act_grad(config.activation, cache["pre"][l - 1], cache["post"][l])
    return grads


def _arccos_step(k12, k11, k22, sw2, sb2):
    norm = np.sqrt(k11 * k22)
    cos = np.clip(k12 / np.where(norm > 0, norm, 1.0), -1.0, 1.0)
    theta = np.arccos(cos)
    return sb2 + sw2 / (2.0 * np.pi) * norm * (np.sin(theta) + (np.pi - theta) * cos)


def nngp_relu_matrix(config, X, X2=None):
    """Infinite-width output covariance between rows of X and X2 (ReLU only)."""
    if config.activation != "relu":
        raise UnsupportedActivation("closed-form NNGP kernel is implemented for ReLU only")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X2 = X if X2 is None else np.atleast_2d(np.asarray(X2, dtype=float))
    if X.shape[1] != config.d_in or X2.shape[1] != config.d_in:
        raise ShapeMismatch(f"inputs must have width {config.d_in}")
    sw2, sb2, d = config.sigma_w2, config.sigma_b2, config.d_in
    K = sb2 + sw2 * (X @ X2.T) / d
    k1 = sb2 + sw2 * np.sum(X * X, 1) / d
    k2 = sb2 + sw2 * np.sum(X2 * X2, 1) / d
    for _ in range(config.n_layers - 1):
        K = _arccos_step(K, k1[:, None], k2[None, :], sw2, sb2)
        k1 = sb2 + sw2 * k1 / 2.0
        k2 = sb2 + sw2 * k2 / 2.0
    return K


def nngp_relu_kernel(config, x, x2):
    return float(nngp_relu_matrix(config, np.atleast_1d(x)[None, :], np.atleast_1d(x2)[None, :])[0, 0])

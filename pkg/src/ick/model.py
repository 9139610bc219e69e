"""The ICK model: per-source branches joined by a chained inner product.

Each branch maps one input source to a length-``p`` latent vector: a
neural-network branch (:class:`NNBranch`) or a kernel branch
(:class:`KernelBranch`, wrapping a Nyström or RFF latent map).  The
prediction for a point is ``sum_k prod_m z_k^(m)``, which for two branches
is the plain inner product.

Training is manual reverse mode: the gradient reaching branch ``m`` at
coordinate ``k`` is the loss gradient times the product of the other
branches' coordinate ``k``.
"""

import json
import os
import tempfile
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import kernels as kern
from .errors import MissingSource, NonFiniteLoss, ShapeMismatch
from .latentmap import NystromMap, RffMap, even_inducing
from .linalg import DEFAULT_JITTER, derive_seed, make_rng
from .nn import MlpConfig, MlpParams, mlp_backward, mlp_forward, mlp_init

CHECKPOINT_FORMAT = "ick-checkpoint"
CHECKPOINT_VERSION = 1


def _source(Xs, m):
    try:
        A = Xs[m]
    except (IndexError, KeyError):
        raise MissingSource(f"input source {m} is missing") from None
    if A is None:
        raise MissingSource(f"input source {m} is missing")
    A = np.asarray(A, dtype=float)
    return A[:, None] if A.ndim == 1 else A


class NNBranch:
    kind = "nn"

    def __init__(self, config, params, source=0):
        self.config = config
        self.params = params
        self.source = int(source)

    @property
    def p(self):
        return self.config.p

    @property
    def n_params(self):
        return self.params.size

    def forward(self, Xs, need_grad=True):
        Z, cache = mlp_forward(self.params, self.config, _source(Xs, self.source))
        return Z, cache

    def backward(self, cache, dZ):
        return mlp_backward(self.params, self.config, cache, dZ).flat()

    def get_flat(self):
        return self.params.flat()

    def set_flat(self, v):
        self.params.load_flat(v)

    def trainable_mask(self):
        if self.config.trainable == "all":
            return np.ones(self.n_params, dtype=bool)
        mask = np.zeros(self.n_params, dtype=bool)
        W, b = self.params.weights[-1], self.params.biases[-1]
        mask[self.n_params - W.size - b.size :] = True
        return mask

    def decay_mask(self):
        parts = []
        for W, b in zip(self.params.weights, self.params.biases):
            parts += [np.ones(W.size, bool), np.zeros(b.size, bool)]
        return np.concatenate(parts)

    def copy(self):
        return NNBranch(self.config, self.params.copy(), self.source)

    def to_json(self):
        return {
            "type": "nn",
            "source": self.source,
            "config": self.config.to_json(),
            "weights": [W.tolist() for W in self.params.weights],
            "biases": [b.tolist() for b in self.params.biases],
        }

    @classmethod
    def from_json(cls, doc):
        cfg = MlpConfig.from_json(doc["config"])
        params = MlpParams(
            [np.array(W, dtype=float).reshape(o, i) for W, i, o in zip(doc["weights"], cfg.widths[:-1], cfg.widths[1:])],
            [np.array(b, dtype=float) for b in doc["biases"]],
        )
        return cls(cfg, params, doc.get("source", 0))


class KernelBranch:
    kind = "kernel"

    def __init__(self, latent_map, source=1, trainable=True):
        self.map = latent_map
        self.source = int(source)
        self.trainable = bool(trainable)

    @property
    def p(self):
        return self.map.dim

    @property
    def n_params(self):
        return self.map.params.size

    def forward(self, Xs, need_grad=True):
        Z, cache = self.map.forward(_source(Xs, self.source), need_grad=need_grad and self.trainable)
        return Z.T, cache

    def backward(self, cache, dZ):
        if not self.trainable:
            return np.zeros(self.n_params)
        return self.map.vjp(cache, dZ.T)

    def get_flat(self):
        return self.map.params.copy()

    def set_flat(self, v):
        self.map.params[...] = v

    def trainable_mask(self):
        if not self.trainable:
            return np.zeros(self.n_params, dtype=bool)
        return ~self.map.spec.fixed_mask()

    def decay_mask(self):
        return np.zeros(self.n_params, dtype=bool)

    def copy(self):
        m = self.map
        if isinstance(m, NystromMap):
            new = NystromMap(m.spec, m.params.copy(), m.inducing, m.jitter_schedule)
        else:
            new = RffMap(m.spec, m.params.copy(), m.d_m, m.seed, m.input_dim)
        return KernelBranch(new, self.source, self.trainable)

    def to_json(self):
        m = self.map
        doc = {
            "type": "kernel",
            "source": self.source,
            "trainable": self.trainable,
            "kernel": kern.to_json(m.spec, m.params),
            "theta": m.params.tolist(),
        }
        if isinstance(m, NystromMap):
            doc["latent"] = {"method": "nystrom", "p": m.p, "inducing": m.inducing.tolist()}
        else:
            doc["latent"] = {"method": "rff", "p": 2 * m.d_m, "seed": m.seed, "input_dim": m.input_dim}
        return doc

    @classmethod
    def from_json(cls, doc):
        spec, _ = kern.from_json(doc["kernel"])
        theta = np.array(doc["theta"], dtype=float)
        lat = doc["latent"]
        if lat["method"] == "nystrom":
            m = NystromMap(spec, theta, np.array(lat["inducing"], dtype=float))
        else:
            m = RffMap(spec, theta, lat["p"] // 2, lat["seed"], lat.get("input_dim", 1))
        return cls(m, doc.get("source", 1), doc.get("trainable", True))


class IckModel:
    """Ordered branches sharing latent dimension ``p``."""

    def __init__(self, branches):
        branches = list(branches)
        if not branches:
            raise ValueError("an ICK model needs at least one branch")
        ps = {b.p for b in branches}
        if len(ps) != 1:
            raise ShapeMismatch(f"branches disagree on latent dimension: {sorted(ps)}")
        self.branches = branches

    @property
    def p(self):
        return self.branches[0].p

    @property
    def M(self):
        return len(self.branches)

    @property
    def n_params(self):
        return sum(b.n_params for b in self.branches)

    def latents(self, Xs, need_grad=False):
        return [b.forward(Xs, need_grad=need_grad) for b in self.branches]

    def forward(self, Xs, need_grad=True):
        outs = self.latents(Xs, need_grad=need_grad)
        yhat = chained_product([Z for Z, _ in outs])
        return yhat, outs

    def predict(self, Xs):
        return self.forward(_inputs(Xs), need_grad=False)[0]

    def backward(self, outs, dy):
        Zs = [Z for Z, _ in outs]
        grads = []
        for m, (b, (_, cache)) in enumerate(zip(self.branches, outs)):
            rest = np.ones_like(Zs[m])
            for j, Z in enumerate(Zs):
                if j != m:
                    rest = rest * Z
            grads.append(b.backward(cache, dy[:, None] * rest))
        return np.concatenate(grads)

    def get_flat(self):
        return np.concatenate([b.get_flat() for b in self.branches])

    def set_flat(self, v):
        off = 0
        for b in self.branches:
            b.set_flat(v[off : off + b.n_params])
            off += b.n_params

    def trainable_mask(self):
        return np.concatenate([b.trainable_mask() for b in self.branches])

    def decay_mask(self):
        return np.concatenate([b.decay_mask() for b in self.branches])

    def copy(self):
        return IckModel([b.copy() for b in self.branches])

    def to_json(self):
        return {"p": self.p, "branches": [b.to_json() for b in self.branches]}

    @classmethod
    def from_json(cls, doc):
        out = []
        for b in doc["branches"]:
            out.append(NNBranch.from_json(b) if b["type"] == "nn" else KernelBranch.from_json(b))
        return cls(out)


def chained_product(Zs):
    """``sum_k prod_m Z_m[:, k]`` for a list of (n, p) arrays."""
    P = Zs[0]
    for Z in Zs[1:]:
        P = P * Z
    return P.sum(axis=1)


def _inputs(data):
    """Accept a Dataset, a list of per-source arrays, or a dict."""
    return getattr(data, "sources", data)


def ick_predict(model, x):
    """Prediction for one multi-source point given as a list of vectors."""
    Xs = [None if s is None else np.atleast_1d(np.asarray(s, float))[None, :] for s in x]
    return float(model.predict(Xs)[0])


# --- losses ---------------------------------------------------------------


def compute_loss(pred, y, kind="mse"):
    """Mean loss and its gradient with respect to ``pred``."""
    pred = np.asarray(pred, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if pred.shape != y.shape:
        raise ShapeMismatch(f"pred has {pred.size} entries, y has {y.size}")
    n = pred.size
    r = pred - y
    if kind == "mse":
        return float(np.mean(r**2)), 2.0 * r / n
    if kind == "mae":
        return float(np.mean(np.abs(r))), np.sign(r) / n
    raise ValueError(f"unknown loss {kind!r}")


def softmax(logits):
    logits = np.asarray(logits, dtype=float)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean cross-entropy of integer labels and its gradient w.r.t. logits."""
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    labels = np.asarray(labels, dtype=int).ravel()
    if labels.size != logits.shape[0]:
        raise ShapeMismatch("one label per row of logits required")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = labels.size
    loss = -float(np.mean(logp[np.arange(n), labels]))
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


# --- optimization ----------------------------------------------------------


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 50
    epochs: int = 100
    loss: str = "mse"
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")
        if self.loss not in ("mse", "mae"):
            raise ValueError("loss must be 'mse' or 'mae'")

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, doc):
        known = cls.__dataclass_fields__
        unknown = set(doc) - set(known)
        if unknown:
            raise ValueError(f"unknown train settings {sorted(unknown)}")
        return cls(**doc)


@dataclass
class OptimizerState:
    step: int = 0
    m: np.ndarray = None
    v: np.ndarray = None

    def to_json(self):
        return {
            "step": self.step,
            "m": None if self.m is None else self.m.tolist(),
            "v": None if self.v is None else self.v.tolist(),
        }

    @classmethod
    def from_json(cls, doc):
        arr = lambda a: None if a is None else np.array(a, dtype=float)
        return cls(doc["step"], arr(doc["m"]), arr(doc["v"]))


def optimizer_step(state, params, grads, config, decay_mask=None, trainable_mask=None):
    """One SGD-with-momentum or Adam update with decoupled weight decay.

    Entries outside ``trainable_mask`` are left untouched; decay applies to
    entries in ``decay_mask`` (all trainable entries when omitted).
    """
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape:
        raise ShapeMismatch(f"params {params.shape} vs grads {grads.shape}")
    train = np.ones(params.shape, bool) if trainable_mask is None else trainable_mask
    decay = train if decay_mask is None else (decay_mask & train)
    g = np.where(train, grads, 0.0)
    if state.m is None:
        state.m = np.zeros_like(params)
    state.step += 1
    lr = config.lr
    new = params.copy()
    if config.weight_decay:
        new = np.where(decay, new - lr * config.weight_decay * params, new)
    if config.optimizer == "sgd":
        state.m = config.momentum * state.m + g
        update = state.m
    else:
        if state.v is None:
            state.v = np.zeros_like(params)
        b1, b2 = config.beta1, config.beta2
        state.m = b1 * state.m + (1 - b1) * g
        state.v = b2 * state.v + (1 - b2) * g * g
        mhat = state.m / (1 - b1**state.step)
        vhat = state.v / (1 - b2**state.step)
        update = mhat / (np.sqrt(vhat) + config.eps)
    return np.where(train, new - lr * update, new)


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def _subset(Xs, idx):
    return [None if A is None else np.asarray(A)[idx] for A in Xs]


def train(model, data, config, y=None, callback=None, state=None):
    """Minibatch training (mutates ``model``).  Returns ``(model, loss_trace)``.

    ``data`` is a Dataset, or a list of per-source arrays with ``y`` given
    separately.  The trace holds one size-weighted mean batch loss per epoch.
    Minibatches come from a fresh seeded permutation each epoch.
    """
    Xs = _inputs(data)
    y = np.asarray(data.y if y is None else y, dtype=float)
    n = y.size
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = make_rng(config.seed)
    state = state or OptimizerState()
    tmask, dmask = model.trainable_mask(), model.decay_mask()
    theta = model.get_flat()
    trace = []
    for epoch in range(config.epochs):
        total = 0.0
        for b, idx in enumerate(_batches(n, config.batch_size, rng)):
            yhat, outs = model.forward(_subset(Xs, idx))
            loss, dy = compute_loss(yhat, y[idx], config.loss)
            if not np.isfinite(loss):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch}, batch {b}", batch_index=b, epoch=epoch
                )
            grad = model.backward(outs, dy)
            theta = optimizer_step(state, theta, grad, config, dmask, tmask)
            model.set_flat(theta)
            total += loss * idx.size
        trace.append(total / n)
        if callback is not None:
            callback(epoch, trace[-1], model)
    model.optimizer_state = state
    return model, trace


# --- classification --------------------------------------------------------


def classify_scores(models, Xs):
    return np.stack([m.predict(_inputs(Xs)) for m in models], axis=1)


def classify_predict(models, Xs):
    """Class probabilities (n, C): softmax over one ICK output per class."""
    if len(models) < 2:
        raise ValueError("classification needs at least two class models")
    return softmax(classify_scores(models, Xs))


def train_classifier(models, data, config, labels=None):
    """Joint cross-entropy training of per-class ICK models (mutates them)."""
    Xs = _inputs(data)
    labels = np.asarray(data.labels if labels is None else labels, dtype=int)
    n = labels.size
    rng = make_rng(config.seed)
    states = [OptimizerState() for _ in models]
    masks = [(m.trainable_mask(), m.decay_mask()) for m in models]
    thetas = [m.get_flat() for m in models]
    trace = []
    for epoch in range(config.epochs):
        total = 0.0
        for b, idx in enumerate(_batches(n, config.batch_size, rng)):
            Xb = _subset(Xs, idx)
            fwd = [m.forward(Xb) for m in models]
            logits = np.stack([yh for yh, _ in fwd], axis=1)
            loss, G = cross_entropy(logits, labels[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, batch {b}", b, epoch)
            for c, m in enumerate(models):
                grad = m.backward(fwd[c][1], G[:, c])
                thetas[c] = optimizer_step(states[c], thetas[c], grad, config, masks[c][1], masks[c][0])
                m.set_flat(thetas[c])
            total += loss * idx.size
        trace.append(total / n)
    return models, trace


# --- templates --------------------------------------------------------------


@dataclass(frozen=True)
class NNBranchSpec:
    """Recipe for a fresh NN branch; ``d_in`` defaults to the data width."""

    hidden: tuple = (64,)
    activation: str = "relu"
    sigma_w2: float = 2.0
    sigma_b2: float = 0.01
    trainable: str = "all"
    source: int = 0
    d_in: int = None

    def build(self, p, seed, Xs=None):
        d_in = self.d_in
        if d_in is None:
            if Xs is None:
                raise ValueError("d_in unknown: pass data or set d_in")
            d_in = _source(Xs, self.source).shape[1]
        cfg = MlpConfig((d_in, *self.hidden, p), self.activation, self.sigma_w2, self.sigma_b2, self.trainable)
        return NNBranch(cfg, mlp_init(cfg, make_rng(seed)), self.source)


@dataclass(frozen=True)
class KernelBranchSpec:
    """Recipe for a kernel branch; ``inducing='auto'`` spans the data range."""

    kernel: kern.KernelSpec
    params: tuple
    method: str = "nystrom"
    inducing: object = "auto"
    seed: int = 0
    source: int = 1
    trainable: bool = True
    jitter: tuple = DEFAULT_JITTER

    def build(self, p, seed, Xs=None):
        theta = np.array(self.params, dtype=float)
        if self.method == "nystrom":
            if isinstance(self.inducing, str):
                if Xs is None:
                    raise ValueError("automatic inducing points need data")
                ind = even_inducing(_source(Xs, self.source), p)
            else:
                ind = np.asarray(self.inducing, dtype=float)
            lmap = NystromMap(self.kernel, theta, ind, self.jitter)
        elif self.method == "rff":
            if p % 2:
                raise ValueError("RFF needs an even latent dimension")
            width = 1
            if Xs is not None:
                width = _source(Xs, self.source).shape[1]
            if self.kernel.dims is not None:
                width = len(self.kernel.dims)
            lmap = RffMap(self.kernel, theta, p // 2, derive_seed(self.seed, seed), width)
        else:
            raise ValueError(f"unknown latent method {self.method!r}")
        return KernelBranch(lmap, self.source, self.trainable)


@dataclass(frozen=True)
class ModelSpec:
    p: int
    branches: tuple = field(default_factory=tuple)

    def build(self, seed, Xs=None, nn_trainable=None):
        """Fresh model; branch ``i`` draws from the stream ``(seed, i)``."""
        Xs = _inputs(Xs) if Xs is not None else None
        out = []
        for i, b in enumerate(self.branches):
            if nn_trainable is not None and isinstance(b, NNBranchSpec):
                b = replace(b, trainable=nn_trainable)
            out.append(b.build(self.p, derive_seed(seed, i), Xs))
        return IckModel(out)

    @classmethod
    def from_json(cls, doc, Xs=None):
        p = int(doc["p"])
        out = []
        for b in doc["branches"]:
            kind = b.get("type", "nn")
            if kind == "nn":
                out.append(
                    NNBranchSpec(
                        hidden=tuple(b.get("hidden", (64,))),
                        activation=b.get("activation", "relu"),
                        sigma_w2=float(b.get("sigma_w2", 2.0)),
                        sigma_b2=float(b.get("sigma_b2", 0.01)),
                        trainable=b.get("trainable", "all"),
                        source=int(b.get("source", 0)),
                        d_in=b.get("d_in"),
                    )
                )
            elif kind == "kernel":
                lat = b.get("latent", {})
                n_grid = p if lat.get("method", "nystrom") == "nystrom" else None
                spec, theta = kern.from_json(
                    b["kernel"], X=None if Xs is None else _source(_inputs(Xs), b.get("source", 1)), n_grid=n_grid
                )
                if lat.get("p", p) != p:
                    raise ValueError("latent map p must equal the model p")
                out.append(
                    KernelBranchSpec(
                        kernel=spec,
                        params=tuple(theta),
                        method=lat.get("method", "nystrom"),
                        inducing=_parse_inducing(lat.get("inducing", "auto")),
                        seed=int(lat.get("seed", 0)),
                        source=int(b.get("source", 1)),
                        trainable=bool(b.get("trainable", True)),
                    )
                )
            else:
                raise ValueError(f"unknown branch type {kind!r}")
        return cls(p, tuple(out))


def _parse_inducing(value):
    if isinstance(value, str):
        if value != "auto":
            raise ValueError(f"inducing must be 'auto' or a list of points, got {value!r}")
        return value
    arr = np.asarray(value, dtype=float)
    arr = arr.reshape(-1, 1) if arr.ndim == 1 else arr
    return tuple(map(tuple, arr))


# --- checkpoints -------------------------------------------------------------


def atomic_write_text(path, text):
    """Write via a temp file in the same directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, model, seed, config=None, trace=None, extra=None):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": int(seed),
        "model": model.to_json(),
        "train": None if config is None else config.to_json(),
        "loss_trace": None if trace is None else [float(t) for t in trace],
    }
    state = getattr(model, "optimizer_state", None)
    if state is not None:
        doc["optimizer_state"] = state.to_json()
    if extra:
        doc.update(extra)
    atomic_write_text(path, json.dumps(doc))
    return doc


def load_checkpoint(path):
    """Returns ``(model, doc)``; the restored optimizer state rides on the model."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not an ICK checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    model = IckModel.from_json(doc["model"])
    if doc.get("optimizer_state"):
        model.optimizer_state = OptimizerState.from_json(doc["optimizer_state"])
    return model, doc

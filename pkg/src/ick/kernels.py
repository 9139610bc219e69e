"""Positive-definite kernels with analytic hyperparameter gradients.

Leaf kernels (``k`` below, ``r = ||x - x'||``, ``tau = x - x'``)::

    linear             variance * <x, x'>
    rbf                variance * exp(-r^2 / (2 lengthscale^2))
    periodic           variance * exp(-2 sin^2(pi r / period) / lengthscale^2)
    spectral_mixture   sum_q w_q exp(-2 pi^2 r^2 v_q) prod_d cos(2 pi mu_q tau_d)

``sum`` and ``product`` combine children elementwise.  Every leaf reads one
input source (an index into a list of per-source arrays) and optionally a
subset of that source's columns.

Hyperparameters live in a flat unconstrained vector: positive quantities are
stored as logs, spectral-mixture means are stored raw.  Names listed in
``KernelSpec.fixed`` are excluded from training (their gradient is still
computed; the optimizer masks it).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch

LEAF_KINDS = ("linear", "rbf", "periodic", "spectral_mixture")
COMPOSITE_KINDS = ("sum", "product")

_ALIASES = {
    "linear": "linear",
    "dotproduct": "linear",
    "rbf": "rbf",
    "squaredexponential": "rbf",
    "expsinesquared": "periodic",
    "periodic": "periodic",
    "spectralmixture": "spectral_mixture",
    "spectral_mixture": "spectral_mixture",
    "sm": "spectral_mixture",
    "sum": "sum",
    "product": "product",
}


def canonical_kind(name):
    key = str(name).replace("-", "").replace(" ", "").lower()
    if key not in _ALIASES:
        key = key.replace("_", "")
    try:
        return _ALIASES[key]
    except KeyError:
        raise ValueError(f"unknown kernel type {name!r}") from None


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    source: int = 0
    dims: tuple = None
    n_components: int = 1
    children: tuple = ()
    fixed: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "kind", canonical_kind(self.kind))
        object.__setattr__(self, "fixed", frozenset(self.fixed))
        if self.dims is not None:
            object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if self.kind in COMPOSITE_KINDS:
            if not self.children:
                raise ValueError(f"{self.kind} kernel needs children")
            object.__setattr__(self, "children", tuple(self.children))
        elif self.children:
            raise ValueError(f"leaf kernel {self.kind} cannot have children")
        if self.kind == "spectral_mixture" and self.n_components < 1:
            raise ValueError("spectral mixture needs at least one component")

    @property
    def is_composite(self):
        return self.kind in COMPOSITE_KINDS

    def leaf_names(self):
        if self.kind == "linear":
            return ["variance"]
        if self.kind == "rbf":
            return ["variance", "lengthscale"]
        if self.kind == "periodic":
            return ["variance", "lengthscale", "period"]
        if self.kind == "spectral_mixture":
            Q = self.n_components
            return (
                [f"weight{q}" for q in range(Q)]
                + [f"mean{q}" for q in range(Q)]
                + [f"scale{q}" for q in range(Q)]
            )
        return []

    def param_names(self):
        if not self.is_composite:
            return self.leaf_names()
        names = []
        for i, child in enumerate(self.children):
            names += [f"{i}.{n}" for n in child.param_names()]
        return names

    @property
    def n_params(self):
        return len(self.param_names())

    def fixed_mask(self):
        """Boolean mask, True where the parameter is held constant."""
        if not self.is_composite:
            return np.array([n in self.fixed for n in self.leaf_names()], dtype=bool)
        parts = [c.fixed_mask() for c in self.children]
        mask = np.concatenate(parts) if parts else np.zeros(0, bool)
        if self.fixed:
            names = self.param_names()
            mask |= np.array([n in self.fixed for n in names], dtype=bool)
        return mask

    def sources(self):
        if not self.is_composite:
            return {self.source}
        out = set()
        for c in self.children:
            out |= c.sources()
        return out


def linear(source=0, dims=None, fixed=()):
    return KernelSpec("linear", source=source, dims=dims, fixed=fixed)


def rbf(source=0, dims=None, fixed=()):
    return KernelSpec("rbf", source=source, dims=dims, fixed=fixed)


def periodic(source=0, dims=None, fixed=("period",)):
    return KernelSpec("periodic", source=source, dims=dims, fixed=fixed)


def spectral_mixture(n_components, source=0, dims=None, fixed=()):
    return KernelSpec(
        "spectral_mixture", source=source, dims=dims, n_components=n_components, fixed=fixed
    )


def _is_log(name):
    return not name.split(".")[-1].startswith("mean")


def pack(spec, values):
    """Unconstrained parameter vector from a name -> constrained value mapping.

    Missing names fall back to :func:`default_params`.
    """
    names = spec.param_names()
    unknown = set(values) - set(names)
    if unknown:
        raise ValueError(f"unknown kernel parameters {sorted(unknown)} for {names}")
    theta = default_params(spec)
    for i, name in enumerate(names):
        if name in values:
            v = float(values[name])
            if _is_log(name):
                if not v > 0:
                    raise ValueError(f"{name} must be positive, got {v}")
                theta[i] = np.log(v)
            else:
                theta[i] = v
    return theta


def unpack(spec, params):
    """name -> constrained value."""
    params = _check_params(spec, params)
    return {
        n: float(np.exp(t)) if _is_log(n) else float(t)
        for n, t in zip(spec.param_names(), params)
    }


def default_params(spec, period=None, X=None, n_grid=None):
    """Unit variance and lengthscale, user-given period, spread mixture means.

    Spectral-mixture means are spread evenly between the lowest frequency the
    data span resolves (1/span) and the Nyquist frequency of an ``n_grid``
    point grid over that span; ``X`` supplies the span (default 1).
    """
    if spec.is_composite:
        return np.concatenate(
            [default_params(c, period=period, X=X, n_grid=n_grid) for c in spec.children]
        )
    if spec.kind == "linear":
        return np.zeros(1)
    if spec.kind == "rbf":
        return np.zeros(2)
    if spec.kind == "periodic":
        return np.array([0.0, 0.0, np.log(period if period is not None else 1.0)])
    Q = spec.n_components
    span = 1.0
    if X is not None:
        A = _select(spec, X)
        span = float(np.max(A.max(axis=0) - A.min(axis=0))) or 1.0
    n_grid = n_grid or 32
    lo = 1.0 / span
    hi = max(0.5 * (n_grid - 1) / span, lo)
    means = np.linspace(lo, hi, Q) if Q > 1 else np.array([lo])
    return np.concatenate([np.full(Q, np.log(1.0 / Q)), means, np.zeros(Q)])


def _check_params(spec, params):
    params = np.asarray(params, dtype=float).ravel()
    if params.size != spec.n_params:
        raise ShapeMismatch(
            f"kernel {spec.kind} expects {spec.n_params} parameters, got {params.size}"
        )
    return params


def _select(spec, X):
    """The (n, D) block of ``X`` this leaf reads."""
    if isinstance(X, (list, tuple)):
        if spec.source >= len(X):
            raise ShapeMismatch(f"kernel reads source {spec.source}, only {len(X)} given")
        A = X[spec.source]
    elif isinstance(X, dict):
        A = X[spec.source]
    else:
        A = X
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ShapeMismatch(f"inputs must be 1-D or 2-D, got shape {A.shape}")
    if spec.dims is not None:
        if max(spec.dims) >= A.shape[1]:
            raise ShapeMismatch(f"dims {spec.dims} out of range for width {A.shape[1]}")
        A = A[:, list(spec.dims)]
    return A


def _sqdist(A, B):
    d = np.sum(A**2, 1)[:, None] + np.sum(B**2, 1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def _leaf(spec, theta, X, X2, grad):
    A, B = _select(spec, X), _select(spec, X2)
    if A.shape[1] != B.shape[1]:
        raise ShapeMismatch(f"input widths differ: {A.shape[1]} vs {B.shape[1]}")
    kind = spec.kind
    if kind == "linear":
        K = np.exp(theta[0]) * (A @ B.T)
        return K, [K] if grad else None
    if kind == "rbf":
        var, ell = np.exp(theta[0]), np.exp(theta[1])
        r2 = _sqdist(A, B)
        K = var * np.exp(-0.5 * r2 / ell**2)
        return K, [K, K * r2 / ell**2] if grad else None
    if kind == "periodic":
        var, ell, T = np.exp(theta)
        r = np.sqrt(_sqdist(A, B))
        arg = np.pi * r / T
        s = np.sin(arg)
        K = var * np.exp(-2.0 * s**2 / ell**2)
        if not grad:
            return K, None
        return K, [K, K * 4.0 * s**2 / ell**2, K * 4.0 * s * np.cos(arg) * arg / ell**2]
    # spectral mixture
    Q = spec.n_components
    w = np.exp(theta[:Q])
    mu = theta[Q : 2 * Q]
    v = np.exp(theta[2 * Q :])
    tau = A[:, None, :] - B[None, :, :]
    r2 = np.sum(tau**2, axis=-1)
    K = np.zeros(r2.shape)
    gw, gmu, gv = [], [], []
    for q in range(Q):
        E = np.exp(-2.0 * np.pi**2 * r2 * v[q])
        phase = 2.0 * np.pi * mu[q] * tau
        cos = np.cos(phase)
        C = np.prod(cos, axis=-1)
        term = w[q] * E * C
        K += term
        if grad:
            gw.append(term)
            gv.append(term * (-2.0 * np.pi**2 * r2 * v[q]))
            dC = np.zeros(r2.shape)
            for d in range(tau.shape[-1]):
                others = np.prod(np.delete(cos, d, axis=-1), axis=-1)
                dC += -np.sin(phase[..., d]) * 2.0 * np.pi * tau[..., d] * others
            gmu.append(w[q] * E * dC)
    return K, (gw + gmu + gv) if grad else None


def _matrix(spec, params, X, X2, grad):
    if not spec.is_composite:
        return _leaf(spec, params, X, X2, grad)
    mats, grads, off = [], [], 0
    for child in spec.children:
        k = child.n_params
        Kc, Gc = _matrix(child, params[off : off + k], X, X2, grad)
        mats.append(Kc)
        grads.append(Gc)
        off += k
    if spec.kind == "sum":
        K = np.sum(mats, axis=0)
        G = [g for Gc in grads for g in Gc] if grad else None
        return K, G
    K = np.prod(mats, axis=0)
    if not grad:
        return K, None
    G = []
    for i, Gc in enumerate(grads):
        rest = np.ones_like(K)
        for j, Kj in enumerate(mats):
            if j != i:
                rest = rest * Kj
        G += [g * rest for g in Gc]
    return K, G


def kernel_matrix(spec, params, X, X2=None):
    """(n, m) matrix of kernel values between the rows of X and X2."""
    params = _check_params(spec, params)
    K, _ = _matrix(spec, params, X, X if X2 is None else X2, grad=False)
    return K


def kernel_matrix_and_grads(spec, params, X, X2=None):
    """Kernel matrix plus one dK/d(theta_i) matrix per unconstrained parameter."""
    params = _check_params(spec, params)
    return _matrix(spec, params, X, X if X2 is None else X2, grad=True)


def kernel_eval(spec, params, x, x2):
    """Kernel value for a single pair of points.

    For multi-source kernels pass ``x`` as a list with one vector per source.
    """

    def as_row(p):
        if isinstance(p, (list, tuple)) and p and np.ndim(p[0]) >= 1:
            return [np.atleast_1d(np.asarray(s, float))[None, :] for s in p]
        return np.atleast_1d(np.asarray(p, float))[None, :]

    return float(kernel_matrix(spec, params, as_row(x), as_row(x2))[0, 0])


def kernel_param_grad(spec, params, X, X2, upstream):
    """sum_ij upstream_ij * dK_ij / d(theta) for every unconstrained parameter."""
    K, G = kernel_matrix_and_grads(spec, params, X, X2)
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != K.shape:
        raise ShapeMismatch(f"upstream shape {upstream.shape} != kernel shape {K.shape}")
    return np.array([np.sum(upstream * g) for g in G])


# --- JSON round trip -------------------------------------------------------

_JSON_NAMES = {
    "linear": "Linear",
    "rbf": "RBF",
    "periodic": "ExpSineSquared",
    "spectral_mixture": "SpectralMixture",
    "sum": "Sum",
    "product": "Product",
}


def to_json(spec, params):
    """Config fragment ``{"type", "params", "source", ...}`` with constrained values."""
    params = _check_params(spec, params)
    if spec.is_composite:
        out, off = [], 0
        for child in spec.children:
            out.append(to_json(child, params[off : off + child.n_params]))
            off += child.n_params
        doc = {"type": _JSON_NAMES[spec.kind], "children": out}
        if spec.fixed:
            doc["fixed"] = sorted(spec.fixed)
        return doc
    doc = {"type": _JSON_NAMES[spec.kind], "params": unpack(spec, params), "source": spec.source}
    if spec.dims is not None:
        doc["dims"] = list(spec.dims)
    if spec.kind == "spectral_mixture":
        doc["components"] = spec.n_components
    doc["fixed"] = sorted(spec.fixed)
    return doc


def from_json(doc, X=None, n_grid=None):
    """Inverse of :func:`to_json`.  Missing params take their defaults.

    The period of a periodic kernel has no sensible default and may be given
    either as ``params.period`` or as a top-level ``period`` key.
    """
    kind = canonical_kind(doc["type"])
    if kind in COMPOSITE_KINDS:
        parts = [from_json(c, X=X, n_grid=n_grid) for c in doc["children"]]
        spec = KernelSpec(kind, children=tuple(s for s, _ in parts), fixed=doc.get("fixed", ()))
        return spec, np.concatenate([p for _, p in parts])
    fixed = doc.get("fixed")
    if fixed is None:
        fixed = ("period",) if kind == "periodic" else ()
    spec = KernelSpec(
        kind,
        source=int(doc.get("source", 0)),
        dims=doc.get("dims"),
        n_components=int(doc.get("components", 1)),
        fixed=fixed,
    )
    values = dict(doc.get("params", {}))
    if kind == "periodic" and "period" in doc:
        values.setdefault("period", doc["period"])
    if kind == "periodic" and "period" not in values:
        raise ValueError("periodic kernel requires a period")
    if kind == "spectral_mixture":
        values = _expand_sm_lists(values, spec.n_components)
    theta = default_params(spec, X=X, n_grid=n_grid)
    names = spec.param_names()
    for i, name in enumerate(names):
        if name in values:
            v = float(values[name])
            theta[i] = np.log(v) if _is_log(name) else v
    extra = set(values) - set(names)
    if extra:
        raise ValueError(f"unknown kernel parameters {sorted(extra)}")
    return spec, theta


def _expand_sm_lists(values, Q):
    """Accept ``{"weights": [...], "means": [...], "scales": [...]}`` shorthand."""
    out = dict(values)
    for plural, single in (("weights", "weight"), ("means", "mean"), ("scales", "scale")):
        if plural in out:
            seq = out.pop(plural)
            if len(seq) != Q:
                raise ValueError(f"{plural} must have {Q} entries")
            for q, val in enumerate(seq):
                out[f"{single}{q}"] = val
    return out

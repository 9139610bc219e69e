"""Kernel-to-latent-space maps.

A latent map turns inputs into vectors whose inner products reproduce a
kernel: ``z(x) . z(x') ~= k(x, x')``.  Two maps are provided:

* :class:`NystromMap` -- ``z = L^{-1} k(inducing, x)`` where ``L`` is the
  Cholesky factor of the inducing-point kernel matrix (so ``U = L^{-1}``
  satisfies ``U^T U = K_p^{-1}``).  Gradients reach the kernel parameters
  through both ``k(inducing, x)`` and the Cholesky factor.
* :class:`RffMap` -- random Fourier features with frequencies written as a
  deterministic function of fixed base draws and the current kernel
  parameters, so gradients flow through the reparameterization.

Both return ``Z`` with shape ``(p, n)``: one column per input point.
"""

import numpy as np
from scipy import special

from . import kernels as kern
from .errors import ShapeMismatch, UnsupportedSpectrum
from .linalg import DEFAULT_JITTER, cholesky, cholesky_vjp, make_rng, triangular_solve

N_HARMONICS = 64


def _as_2d(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ShapeMismatch(f"inputs must be 1-D or 2-D, got shape {X.shape}")
    return X


def even_inducing(X, p):
    """``p`` inducing points evenly spaced over the range of ``X``.

    In one dimension this is ``linspace(min, max, p)``.  For several
    coordinates a per-coordinate grid is built and ``p`` of its points,
    evenly spaced in grid order, are kept.
    """
    X = _as_2d(X)
    if p < 1:
        raise ValueError("need at least one inducing point")
    lo, hi = X.min(axis=0), X.max(axis=0)
    D = X.shape[1]
    if D == 1:
        return np.linspace(lo[0], hi[0], p)[:, None]
    g = int(np.ceil(p ** (1.0 / D)))
    while g**D < p:
        g += 1
    axes = [np.linspace(lo[d], hi[d], g) for d in range(D)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, D)
    idx = np.unique(np.round(np.linspace(0, len(grid) - 1, p)).astype(int))
    return grid[idx]


class NystromMap:
    """Nyström latent map with ``p`` fixed inducing points."""

    method = "nystrom"

    def __init__(self, spec, params, inducing, jitter_schedule=DEFAULT_JITTER):
        self.spec = spec
        self.params = np.array(params, dtype=float)
        if self.params.size != spec.n_params:
            raise ShapeMismatch("kernel parameter vector has the wrong length")
        self.inducing = _as_2d(inducing).copy()
        if len(self.inducing) < 1:
            raise ValueError("need at least one inducing point")
        if len(np.unique(self.inducing, axis=0)) != len(self.inducing):
            raise ValueError("inducing points must be pairwise distinct")
        self.jitter_schedule = tuple(jitter_schedule)
        self.last_jitter = None

    @classmethod
    def auto(cls, spec, params, X, p, **kw):
        return cls(spec, params, even_inducing(X, p), **kw)

    @property
    def p(self):
        return len(self.inducing)

    @property
    def dim(self):
        return self.p

    def factor(self):
        """Cholesky factor ``L`` of ``K_p + eps I`` at the current parameters."""
        Kp = kern.kernel_matrix(self.spec, self.params, self.inducing)
        L, eps = cholesky(Kp, self.jitter_schedule)
        self.last_jitter = eps
        return L

    def forward(self, X, need_grad=True):
        X = _as_2d(X)
        if need_grad:
            Kp, dKp = kern.kernel_matrix_and_grads(self.spec, self.params, self.inducing)
            Kpn, dKpn = kern.kernel_matrix_and_grads(self.spec, self.params, self.inducing, X)
        else:
            Kp = kern.kernel_matrix(self.spec, self.params, self.inducing)
            Kpn = kern.kernel_matrix(self.spec, self.params, self.inducing, X)
            dKp = dKpn = None
        L, eps = cholesky(Kp, self.jitter_schedule)
        self.last_jitter = eps
        Z = triangular_solve(L, Kpn)
        cache = {"L": L, "Z": Z, "dKp": dKp, "dKpn": dKpn}
        return Z, cache

    def vjp(self, cache, Z_bar):
        """Gradient of the loss w.r.t. the unconstrained kernel parameters."""
        Z, L = cache["Z"], cache["L"]
        Z_bar = np.asarray(Z_bar, dtype=float)
        if Z_bar.shape != Z.shape:
            raise ShapeMismatch(f"Z_bar shape {Z_bar.shape} != Z shape {Z.shape}")
        if cache["dKp"] is None:
            raise ValueError("forward was run without gradients")
        Kpn_bar = triangular_solve(L, Z_bar, side="upper-transposed")
        L_bar = -np.tril(Kpn_bar @ Z.T)
        Kp_bar = cholesky_vjp(L, L_bar)
        g = np.array([np.sum(Kp_bar * d) for d in cache["dKp"]])
        g += np.array([np.sum(Kpn_bar * d) for d in cache["dKpn"]])
        return g

    def gram(self, X):
        """Approximate kernel matrix ``Z^T Z`` on ``X``."""
        Z, _ = self.forward(X, need_grad=False)
        return Z.T @ Z


def nystrom_forward(nmap, X):
    return nmap.forward(X)


def nystrom_vjp(nmap, cache, Z_bar):
    return nmap.vjp(cache, Z_bar)


def periodic_harmonic_probs(lengthscale, n_harmonics=N_HARMONICS):
    """Spectral weights of the periodic kernel over harmonics 0..n_harmonics.

    ``exp(cos(u)/l^2) = I_0(a) + 2 sum_n I_n(a) cos(n u)`` with ``a = 1/l^2``,
    so harmonic ``n`` carries weight ``2 I_n(a) e^{-a}`` (``I_0 e^{-a}`` for
    n = 0).  The truncated weights are renormalized.
    """
    a = 1.0 / lengthscale**2
    n = np.arange(n_harmonics + 1)
    w = special.ive(n, a)
    w[1:] *= 2.0
    return w / w.sum()


class RffMap:
    """Random Fourier features with ``d_m`` frequencies (``p = 2 d_m``).

    Base draws are fixed at construction: standard normals for the
    Gaussian parts, uniforms for the discrete choices (mixture component,
    periodic harmonic), and random signs.  Discrete choices are re-derived
    from the uniforms under the current parameters on every call, so they
    follow the kernel but carry no gradient.
    """

    method = "rff"

    def __init__(self, spec, params, d_m, seed, input_dim=1):
        if spec.is_composite or spec.kind == "linear":
            raise UnsupportedSpectrum(f"no spectral sampler for kernel {spec.kind}")
        if spec.kind == "periodic" and input_dim != 1:
            raise UnsupportedSpectrum("periodic RFF sampler supports 1-D inputs only")
        if d_m < 1:
            raise ValueError("d_m must be positive")
        self.spec = spec
        self.params = np.array(params, dtype=float)
        if self.params.size != spec.n_params:
            raise ShapeMismatch("kernel parameter vector has the wrong length")
        self.d_m = int(d_m)
        self.seed = int(seed)
        self.input_dim = int(input_dim)
        rng = make_rng(seed)
        self.eps = rng.standard_normal((self.d_m, self.input_dim))
        self.u = rng.random(self.d_m)
        self.signs = np.where(rng.random((self.d_m, self.input_dim)) < 0.5, -1.0, 1.0)
        self.eps.setflags(write=False)
        self.u.setflags(write=False)
        self.signs.setflags(write=False)

    @property
    def dim(self):
        return 2 * self.d_m

    def _frequencies(self):
        """(amplitude, Omega, extras) under the current parameters."""
        th = self.params
        kind = self.spec.kind
        if kind == "rbf":
            amp = np.exp(0.5 * th[0])
            return amp, self.eps / np.exp(th[1]), None
        if kind == "periodic":
            amp = np.exp(0.5 * th[0])
            probs = periodic_harmonic_probs(np.exp(th[1]))
            n = np.searchsorted(np.cumsum(probs), self.u * np.cumsum(probs)[-1], side="right")
            n = np.minimum(n, len(probs) - 1)
            Omega = (2.0 * np.pi * n / np.exp(th[2]))[:, None] * np.ones((1, self.input_dim))
            return amp, Omega, n
        Q = self.spec.n_components
        w = np.exp(th[:Q])
        mu = th[Q : 2 * Q]
        v = np.exp(th[2 * Q :])
        cdf = np.cumsum(w) / w.sum()
        c = np.minimum(np.searchsorted(cdf, self.u, side="right"), Q - 1)
        s = self.signs * mu[c][:, None] + np.sqrt(v[c])[:, None] * self.eps
        return np.sqrt(w.sum()), 2.0 * np.pi * s, c

    def forward(self, X, need_grad=True):
        X = _as_2d(X)
        X = X if self.spec.dims is None else X[:, list(self.spec.dims)]
        if X.shape[1] != self.input_dim:
            raise ShapeMismatch(f"expected {self.input_dim} input columns, got {X.shape[1]}")
        amp, Omega, extra = self._frequencies()
        U = Omega @ X.T
        scale = amp / np.sqrt(self.d_m)
        Z = scale * np.vstack([np.cos(U), np.sin(U)])
        cache = {"X": X, "U": U, "Z": Z, "amp": amp, "Omega": Omega, "extra": extra}
        return Z, cache

    def vjp(self, cache, Z_bar):
        Z = cache["Z"]
        Z_bar = np.asarray(Z_bar, dtype=float)
        if Z_bar.shape != Z.shape:
            raise ShapeMismatch(f"Z_bar shape {Z_bar.shape} != Z shape {Z.shape}")
        d = self.d_m
        amp, U, X, Omega = cache["amp"], cache["U"], cache["X"], cache["Omega"]
        amp_bar = np.sum(Z_bar * Z) / amp
        scale = amp / np.sqrt(d)
        U_bar = scale * (-Z_bar[:d] * np.sin(U) + Z_bar[d:] * np.cos(U))
        Om_bar = U_bar @ X
        th = self.params
        g = np.zeros_like(th)
        kind = self.spec.kind
        if kind == "rbf":
            g[0] = amp_bar * amp / 2.0
            g[1] = -np.sum(Om_bar * Omega)
        elif kind == "periodic":
            g[0] = amp_bar * amp / 2.0
            g[2] = -np.sum(Om_bar * Omega)
        else:
            Q = self.spec.n_components
            w = np.exp(th[:Q])
            v = np.exp(th[2 * Q :])
            c = cache["extra"]
            g[:Q] = amp_bar * w / (2.0 * amp)
            for q in range(Q):
                sel = c == q
                g[Q + q] = 2.0 * np.pi * np.sum(Om_bar[sel] * self.signs[sel])
                g[2 * Q + q] = np.pi * np.sqrt(v[q]) * np.sum(Om_bar[sel] * self.eps[sel])
        return g

    def gram(self, X):
        Z, _ = self.forward(X, need_grad=False)
        return Z.T @ Z


def rff_features(rmap, X):
    Z, _ = rmap.forward(X)
    return Z

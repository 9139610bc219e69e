"""Deep ensembles of ICK models and the exact composite-kernel GP they approximate."""

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import kernels as kern
from .errors import EmptyEnsemble, ShapeMismatch, UnsupportedActivation
from .linalg import DEFAULT_JITTER, cholesky, derive_seed, make_rng, triangular_solve
from .model import KernelBranchSpec, NNBranchSpec, TrainConfig, atomic_write_text, save_checkpoint, train
from .nn import MlpConfig, nngp_relu_matrix


@dataclass
class EnsembleConfig:
    n_members: int = 10
    train: TrainConfig = None
    init: str = "nngp"
    base_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.n_members < 1:
            raise ValueError("an ensemble needs at least one member")
        if self.init not in ("nngp", "free"):
            raise ValueError("init must be 'nngp' or 'free'")
        if self.train is None:
            self.train = TrainConfig()

    def member_seed(self, index):
        return self.base_seed + index


def _train_member(args):
    template, data, cfg, index = args
    seed = cfg.member_seed(index)
    scope = "last" if cfg.init == "nngp" else "all"
    model = template.build(seed, data, nn_trainable=scope)
    model, trace = train(model, data, replace(cfg.train, seed=seed))
    return model, trace


def train_ensemble(template, data, config):
    """Independently initialize and train ``n_members`` models.

    Member ``s`` uses seed ``base_seed + s`` for both its initialization and
    its minibatch order.  Under the ``nngp`` strategy only the last NN layer
    trains.  Results are ordered by member index regardless of ``workers``.
    Returns ``[(model, loss_trace), ...]``.
    """
    jobs = [(template, data, config, s) for s in range(config.n_members)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(_train_member, jobs))
    return [_train_member(j) for j in jobs]


def member_predictions(members, X_test):
    """(N_e, n) array of member predictions."""
    models = [m[0] if isinstance(m, tuple) else m for m in members]
    if not models:
        raise EmptyEnsemble("ensemble has no members")
    return np.stack([m.predict(X_test) for m in models])


def ensemble_stats(members, X_test):
    """Member mean and biased (1/N_e) member variance at each test point."""
    F = member_predictions(members, X_test)
    mu = F.mean(axis=0)
    return mu, np.mean((F - mu) ** 2, axis=0)


@dataclass
class GpPosterior:
    mean: np.ndarray
    cov: np.ndarray
    noise: float

    @property
    def var(self):
        return np.diag(self.cov).copy()


def _kernel_fn(kernel):
    if callable(kernel):
        return kernel
    spec, params = kernel
    return lambda A, B: kern.kernel_matrix(spec, params, A, B)


def gp_exact_posterior(kernel, X_train, y, X_test, noise=0.0, jitter_schedule=DEFAULT_JITTER):
    """Posterior of a zero-mean GP at ``X_test`` with noise ``noise * I`` on the data.

    ``kernel`` is a ``(KernelSpec, params)`` pair or a callable ``k(A, B)``.
    Solves through the Cholesky factor; no explicit inverse is formed.
    """
    if noise < 0:
        raise ValueError("noise variance must be non-negative")
    k = _kernel_fn(kernel)
    y = np.asarray(y, dtype=float).ravel()
    Kxx = k(X_train, X_train)
    if Kxx.shape != (y.size, y.size):
        raise ShapeMismatch("kernel matrix and targets disagree")
    L, _ = cholesky(Kxx + noise * np.eye(y.size), jitter_schedule)
    Ksx = k(X_test, X_train)
    Kss = k(X_test, X_test)
    alpha = triangular_solve(L, triangular_solve(L, y), side="upper-transposed")
    V = triangular_solve(L, Ksx.T)
    cov = Kss - V.T @ V
    return GpPosterior(Ksx @ alpha, 0.5 * (cov + cov.T), float(noise))


def ick_prior_kernel(template, data=None):
    """Callable ``k(Xs, Xs2)``: NNGP kernel of the NN branch times the exact
    kernels of the kernel branches (elementwise), matching the infinite-width
    prior of an untrained model built from ``template``.
    """
    factors = []
    for b in template.branches:
        if isinstance(b, NNBranchSpec):
            if b.activation != "relu":
                raise UnsupportedActivation("analytic prior needs ReLU NN branches")
            d_in = b.d_in
            if d_in is None:
                if data is None:
                    raise ValueError("d_in unknown: pass data or set d_in")
                d_in = np.atleast_2d(np.asarray(_src(data, b.source))).shape[-1]
                if np.ndim(_src(data, b.source)) == 1:
                    d_in = 1
            cfg = MlpConfig((d_in, *b.hidden, template.p), "relu", b.sigma_w2, b.sigma_b2)
            factors.append(("nn", b.source, cfg))
        elif isinstance(b, KernelBranchSpec):
            factors.append(("kernel", b.source, (b.kernel, np.array(b.params))))
        else:
            raise TypeError(f"unknown branch spec {type(b).__name__}")

    def k(A, B):
        out = None
        for kind, src, obj in factors:
            a, b = _col(_src(A, src)), _col(_src(B, src))
            if kind == "nn":
                K = nngp_relu_matrix(obj, a, b)
            else:
                K = kern.kernel_matrix(obj[0], obj[1], a, b)
            out = K if out is None else out * K
        return out

    return k


def _src(data, m):
    return getattr(data, "sources", data)[m]


def _col(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def prior_covariance_mc(template, X_probe, n_draws, rng, data=None):
    """Empirical covariance of untrained predictions over fresh initializations.

    Returns ``(cov, se)`` where ``se`` is the Monte-Carlo standard error of
    each covariance entry.  ``data`` sets the range for automatic inducing
    points (defaults to ``X_probe``).
    """
    for b in template.branches:
        if isinstance(b, NNBranchSpec) and b.activation != "relu":
            raise UnsupportedActivation("prior check needs ReLU NN branches")
    if n_draws < 2:
        raise ValueError("need at least two draws")
    rng = make_rng(rng)
    base = int(rng.integers(2**62))
    ref = X_probe if data is None else data
    Y = np.empty((n_draws, len(_col(_src(X_probe, 0)))))
    for t in range(n_draws):
        model = template.build(derive_seed(base, t), ref)
        Y[t] = model.predict(X_probe)
    D = Y - Y.mean(axis=0)
    prods = D[:, :, None] * D[:, None, :]
    cov = prods.mean(axis=0)
    se = prods.std(axis=0, ddof=1) / np.sqrt(n_draws)
    return cov, se


def save_ensemble(directory, members, config, template_doc=None, metrics=None):
    """Member checkpoints plus a ``manifest.json`` describing the run."""
    os.makedirs(directory, exist_ok=True)
    files = []
    for s, (model, trace) in enumerate(members):
        name = f"member_{s:04d}.json"
        save_checkpoint(os.path.join(directory, name), model, config.member_seed(s), config.train, trace)
        files.append(name)
    manifest = {
        "n_members": config.n_members,
        "init": config.init,
        "base_seed": config.base_seed,
        "member_seeds": [config.member_seed(s) for s in range(config.n_members)],
        "train": config.train.to_json(),
        "template": template_doc,
        "members": files,
        "metrics": metrics or {},
    }
    atomic_write_text(os.path.join(directory, "manifest.json"), json.dumps(manifest, indent=2, sort_keys=True))
    return manifest

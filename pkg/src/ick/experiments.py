"""End-to-end protocols shared by the command line and the acceptance suite.

Every function is deterministic given its seed arguments and returns plain
numbers and arrays; timing, where reported, is kept apart from the metrics.
"""

import time

import numpy as np

from . import kernels as kern
from .data import (
    Dataset,
    SplitSpec,
    gen_gp_synthetic,
    gen_periodic_1d,
    gen_periodic_classes,
    split,
    synthetic_kernel,
)
from .ensemble import EnsembleConfig, gp_exact_posterior, ick_prior_kernel, member_predictions, prior_covariance_mc, train_ensemble
from .latentmap import NystromMap, even_inducing
from .linalg import derive_seed, make_rng, sym_eigvals
from .metrics import eigen_gap_ratio, empirical_w1, kernel_recon_error, regression_errors
from .model import KernelBranchSpec, ModelSpec, NNBranchSpec, TrainConfig, classify_predict, train, train_classifier

PERIOD = 2 * np.pi


def one_period_inducing(p, period=PERIOD):
    """``p`` evenly spaced points covering one period, endpoint excluded."""
    return tuple((period * i / p,) for i in range(p))


def periodic_template(hidden=(256,), p=16, lengthscale=1.0, period=PERIOD, kernel_trainable=False, d_in=None):
    """NN branch on source 0 times a Nyström periodic branch on source 1."""
    ess = kern.periodic(1)
    theta = kern.pack(ess, {"period": period, "lengthscale": lengthscale, "variance": 1.0})
    return ModelSpec(
        p,
        (
            NNBranchSpec(hidden=tuple(hidden), source=0, d_in=d_in),
            KernelBranchSpec(ess, tuple(theta), inducing=one_period_inducing(p, period), source=1, trainable=kernel_trainable),
        ),
    )


# --- prior equivalence -----------------------------------------------------------


def prior_equivalence(width=2048, p=16, n_probe=8, n_draws=5000, seed=0, probe_range=(0.3, 3.0)):
    """Monte-Carlo prior covariance of an untrained model vs the analytic
    ``K_NNGP * K_periodic``.  Returns a dict with both matrices, the
    standard errors, and the count of entries within 3 standard errors.
    """
    tmpl = periodic_template(hidden=(width,), p=p, d_in=1)
    x = np.linspace(*probe_range, n_probe)
    X = [x, x]
    cov, se = prior_covariance_mc(tmpl, X, n_draws, make_rng(seed))
    K = ick_prior_kernel(tmpl)(X, X)
    z = np.abs(cov - K) / se
    return {"empirical": cov, "analytic": K, "se": se, "n_within_3se": int(np.sum(z <= 3)), "n_entries": z.size}


# --- Nyström sweeps -----------------------------------------------------------------


def nystrom_sweep(ps=(2, 4, 8, 16, 32), seeds=range(5), n=64, lengthscale=1.0, x_range=(0.0, 10.0)):
    """Reconstruction error of an RBF kernel matrix against the number of
    evenly spaced inducing points.  One row per (p, seed)."""
    spec = kern.rbf(0)
    theta = kern.pack(spec, {"lengthscale": lengthscale})
    rows = []
    for seed in seeds:
        x = np.sort(make_rng(seed).uniform(*x_range, n))
        K = kern.kernel_matrix(spec, theta, x)
        for p in ps:
            t0 = time.perf_counter()
            nmap = NystromMap(spec, theta, even_inducing(x, p))
            Khat = nmap.gram(x)
            wall = time.perf_counter() - t0
            mx, fro = kernel_recon_error(K, Khat)
            rows.append({"p": p, "seed": seed, "max_abs": mx, "frobenius": fro, "jitter": nmap.last_jitter, "wall_time": wall})
    return rows


def median_by_p(rows, key="frobenius"):
    ps = sorted({r["p"] for r in rows})
    return ps, [float(np.median([r[key] for r in rows if r["p"] == p])) for p in ps]


# --- synthetic composite-kernel regression --------------------------------------------


def concat_sources(ds):
    return Dataset([np.hstack(ds.sources)], ds.y)


def synthetic_comparison(combine="product", seed=0, n=3000, p=32, epochs=200, noise=0.01, hidden=(64,)):
    """Test RMSE of an ICK model (NN on x1, Nyström mixture kernel on x2)
    and of a plain MLP on the concatenated inputs, same data and training."""
    ds = gen_gp_synthetic(n, combine, noise, rng=derive_seed(seed, 0))
    tr, _, te = split(ds, SplitSpec("random", 0.5, seed=seed))
    sm = kern.spectral_mixture(2, source=1)
    theta = kern.default_params(sm, X=[None, tr.sources[1]], n_grid=p)
    cfg = TrainConfig(optimizer="adam", lr=1e-3, epochs=epochs, batch_size=50, weight_decay=0.1, seed=seed)

    ick = ModelSpec(p, (NNBranchSpec(hidden=tuple(hidden), source=0), KernelBranchSpec(sm, tuple(theta), source=1)))
    model, _ = train(ick.build(seed, tr), tr, cfg)
    rmse_ick, mae_ick = regression_errors(te.y, model.predict(te))

    mlp = ModelSpec(1, (NNBranchSpec(hidden=tuple(hidden) + tuple(hidden), source=0),))
    ctr, cte = concat_sources(tr), concat_sources(te)
    base, _ = train(mlp.build(seed, ctr), ctr, cfg)
    rmse_mlp, mae_mlp = regression_errors(te.y, base.predict(cte))
    return {
        "combine": combine,
        "seed": seed,
        "rmse_ick": rmse_ick,
        "mae_ick": mae_ick,
        "rmse_mlp": rmse_mlp,
        "mae_mlp": mae_mlp,
        "learned_kernel": kern.unpack(sm, model.branches[1].map.params),
    }


# --- ensemble vs exact posterior ------------------------------------------------------


def gp_task(n_train=16, noise=1e-4, n_test=100, seed=0):
    """Periodic 1-D training set and a test grid reaching beyond it."""
    ds = gen_periodic_1d(n_train, noise, rng=seed)
    xs = np.linspace(-3 * np.pi, 3 * np.pi, n_test)
    return ds, [xs, xs.copy()]


def gp_train_config(batch_size, epochs=3000):
    # full-batch heavy ball: with only the last layer free the fit is linear least squares
    return TrainConfig(optimizer="sgd", lr=5e-4, momentum=0.9, epochs=epochs, batch_size=batch_size)


def compare_gp(n_members=100, base_seed=0, hidden=(256,), p=16, epochs=3000, data_noise=1e-4, oracle_noise=None, workers=1):
    """Train an NNGP-initialized ensemble and the exact GP on the same task.

    Returns member predictions ``F`` (N_e, n_test), the posterior, and the
    test grid.  ``oracle_noise`` defaults to the data noise.
    """
    ds, Xs = gp_task(noise=data_noise)
    tmpl = periodic_template(hidden, p)
    oracle_noise = data_noise if oracle_noise is None else oracle_noise
    post = gp_exact_posterior(ick_prior_kernel(tmpl, ds), ds.sources, ds.y, Xs, noise=oracle_noise)
    cfg = EnsembleConfig(n_members, gp_train_config(ds.n, epochs), "nngp", base_seed, workers)
    members = train_ensemble(tmpl, ds, cfg)
    return {"F": member_predictions(members, Xs), "posterior": post, "X_test": Xs[0], "data": ds, "members": members}


def gp_agreement(F, post):
    """Mean |mu_hat - mu*| and the fraction of points with sigma_hat within
    a factor 2 of sigma*."""
    mu = F.mean(axis=0)
    sd_hat = np.sqrt(np.mean((F - mu) ** 2, axis=0))
    sd = np.sqrt(np.maximum(post.var, 0.0))
    within = (sd_hat <= 2 * sd) & (sd_hat >= 0.5 * sd)
    return float(np.mean(np.abs(mu - post.mean))), float(np.mean(within))


def marginal_w1(F, post, rng):
    """Grid-averaged W1 between the N_e member values and N_e exact-posterior
    draws at each test point."""
    N, n = F.shape
    sd = np.sqrt(np.maximum(post.var, 0.0))
    ref = post.mean[None, :] + sd[None, :] * make_rng(rng).standard_normal((N, n))
    return float(np.mean([empirical_w1(F[:, i], ref[:, i]) for i in range(n)]))


# --- spectrum -----------------------------------------------------------------------------


def spectrum(n=50, head=5, x_range=(0.0, 2.0)):
    """Eigenvalues and eigen-gap ratio of the synthetic mixture kernel on a grid."""
    spec, theta = synthetic_kernel("product")
    sm = spec.children[1]
    x = np.linspace(*x_range, n)
    K = kern.kernel_matrix(sm, theta[1:], x)
    return {"eigenvalues": sym_eigvals(K), "ratio": eigen_gap_ratio(K, head), "head": head}


# --- classification --------------------------------------------------------------------------


def classification_toy(seed=0, n=600, epochs=100, p=16, hidden=(32,)):
    """Held-out accuracy of one ICK model per class on the periodic toy."""
    ds = gen_periodic_classes(n, rng=derive_seed(seed, 0))
    tr, _, te = split(ds, SplitSpec("random", 0.5, seed=seed))
    tmpl = periodic_template(hidden, p, kernel_trainable=True)
    models = [tmpl.build(derive_seed(seed, 1, c), tr) for c in range(2)]
    cfg = TrainConfig(optimizer="adam", lr=1e-2, epochs=epochs, batch_size=50, seed=seed)
    models, trace = train_classifier(models, tr, cfg)
    probs = classify_predict(models, te)
    return {"accuracy": float(np.mean(probs.argmax(axis=1) == te.labels)), "final_loss": trace[-1], "probs": probs, "test": te}

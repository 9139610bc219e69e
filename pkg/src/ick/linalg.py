"""Dense linear algebra: jittered Cholesky and its reverse-mode gradient,
triangular solves, symmetric eigenvalues and Gaussian sampling.

All randomness in the package goes through :func:`make_rng`, which wraps
numpy's PCG64 bit generator.  PCG64 and numpy's ziggurat normal sampler are
fully specified algorithms, so a seed reproduces the same stream on every
platform.
"""

import numpy as np
from scipy import linalg as sla

from .errors import NoConvergence, NotPositiveDefinite, ShapeMismatch, SingularFactor

DEFAULT_JITTER = (0.0, 1e-8, 1e-6, 1e-4)


def make_rng(seed):
    """Seeded generator.

    ``seed`` may be an int, a sequence of ints (hashed through SeedSequence,
    used to derive independent per-member or per-branch streams), or an
    existing Generator, which is returned unchanged.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (list, tuple)):
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(s) for s in seed])))
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(*keys):
    """Deterministic 63-bit integer seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint64)[0] >> 1)


def rng_state(rng):
    """JSON-serializable snapshot of a generator's stream position."""
    return rng.bit_generator.state


def rng_from_state(state):
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)


def _as_square(A, name="A"):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeMismatch(f"{name} must be square, got shape {A.shape}")
    return A


def _check_symmetric(A, rtol=1e-10):
    scale = max(np.max(np.abs(A)), 1.0) if A.size else 1.0
    if np.max(np.abs(A - A.T), initial=0.0) > rtol * scale:
        raise ValueError("matrix is not symmetric")


def cholesky(A, jitter_schedule=DEFAULT_JITTER):
    """Lower Cholesky factor of ``A + eps*I`` for the first eps that works.

    Returns ``(L, eps)``.  Raises NotPositiveDefinite when every jitter in the
    schedule fails.
    """
    A = _as_square(A)
    _check_symmetric(A)
    n = A.shape[0]
    eye = np.eye(n)
    for eps in jitter_schedule:
        if eps < 0:
            raise ValueError("jitter must be non-negative")
        try:
            L = np.linalg.cholesky(A + eps * eye)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)) and np.all(np.diag(L) > 0):
            return L, float(eps)
    raise NotPositiveDefinite(
        f"Cholesky failed for all jitters {list(jitter_schedule)} (n={n})"
    )


def _phi(X):
    """Lower triangle with the diagonal halved."""
    X = np.tril(X)
    X[np.diag_indices_from(X)] *= 0.5
    return X


def cholesky_vjp(L, L_bar):
    """Gradient with respect to ``A`` given the gradient with respect to ``L``.

    ``A = L L^T``.  The result ``S`` is symmetric and satisfies
    ``d loss = sum(S * dA)`` for any symmetric perturbation ``dA``.
    """
    L = _as_square(L, "L")
    L_bar = np.asarray(L_bar, dtype=float)
    if L_bar.shape != L.shape:
        raise ShapeMismatch(f"L_bar shape {L_bar.shape} != L shape {L.shape}")
    P = _phi(L.T @ np.tril(L_bar))
    # S = L^{-T} P L^{-1}, then symmetrize
    tmp = sla.solve_triangular(L, P, trans="T", lower=True)
    S = sla.solve_triangular(L, tmp.T, trans="T", lower=True).T
    return 0.5 * (S + S.T)


def triangular_solve(L, B, side="lower"):
    """Solve ``L X = B`` (side='lower') or ``L^T X = B`` (side='upper-transposed')."""
    L = _as_square(L, "L")
    B = np.asarray(B, dtype=float)
    if B.shape[0] != L.shape[0]:
        raise ShapeMismatch(f"B has {B.shape[0]} rows, L is {L.shape[0]}x{L.shape[0]}")
    if np.any(np.abs(np.diag(L)) < 1e-300):
        raise SingularFactor("triangular factor has a zero diagonal entry")
    if side == "lower":
        trans = "N"
    elif side in ("upper-transposed", "transpose"):
        trans = "T"
    else:
        raise ValueError(f"unknown side {side!r}")
    return sla.solve_triangular(L, B, trans=trans, lower=True)


def sym_eigvals(A):
    """Eigenvalues of a symmetric matrix, sorted descending."""
    A = _as_square(A)
    _check_symmetric(A, rtol=1e-8)
    try:
        w = np.linalg.eigvalsh(A)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc
    return w[::-1].copy()


def mvn_sample(mean, cov, n, rng, jitter_schedule=DEFAULT_JITTER):
    """``n`` draws from N(mean, cov) as rows of an (n, d) array."""
    mean = np.asarray(mean, dtype=float).ravel()
    cov = _as_square(cov, "cov")
    if cov.shape[0] != mean.size:
        raise ShapeMismatch("mean and cov sizes differ")
    rng = make_rng(rng)
    L, _ = cholesky(cov, jitter_schedule)
    eps = rng.standard_normal((n, mean.size))
    return mean + eps @ L.T

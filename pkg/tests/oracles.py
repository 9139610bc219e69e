"""Independent reference computations used as test oracles.

These are deliberately naive: explicit loops, textbook formulas and dense
inverses, sharing no code with the package beyond plain numpy.
"""

import itertools
import math

import numpy as np


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of scalar ``f`` at vector ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def rbf(x, y, var=1.0, ell=1.0):
    d2 = sum((a - b) ** 2 for a, b in zip(np.atleast_1d(x), np.atleast_1d(y)))
    return var * math.exp(-d2 / (2 * ell * ell))


def periodic(x, y, var=1.0, ell=1.0, period=1.0):
    r = math.sqrt(sum((a - b) ** 2 for a, b in zip(np.atleast_1d(x), np.atleast_1d(y))))
    return var * math.exp(-2 * math.sin(math.pi * r / period) ** 2 / ell**2)


def spectral_mixture(x, y, w, mu, v):
    tau = np.atleast_1d(x) - np.atleast_1d(y)
    r2 = float(tau @ tau)
    total = 0.0
    for wq, mq, vq in zip(w, mu, v):
        c = 1.0
        for t in tau:
            c *= math.cos(2 * math.pi * mq * t)
        total += wq * math.exp(-2 * math.pi**2 * r2 * vq) * c
    return total


def gram(k, X, Y=None):
    Y = X if Y is None else Y
    return np.array([[k(a, b) for b in Y] for a in X])


def mlp_straight_line(weights, biases, x, act):
    """Evaluate an MLP one neuron at a time."""
    h = list(np.atleast_1d(x))
    L = len(weights)
    for l in range(L):
        W, b = weights[l], biases[l]
        out = []
        for i in range(W.shape[0]):
            s = b[i]
            for j in range(W.shape[1]):
                s += W[i, j] * h[j]
            out.append(s if l == L - 1 else act(s))
        h = out
    return np.array(h)


def arccos_relu_one_hidden(x, y, sw2, sb2):
    """Output covariance of a one-hidden-layer ReLU net, written out by hand."""
    d = len(x)
    kxx = sb2 + sw2 * np.dot(x, x) / d
    kyy = sb2 + sw2 * np.dot(y, y) / d
    kxy = sb2 + sw2 * np.dot(x, y) / d
    c = max(-1.0, min(1.0, kxy / math.sqrt(kxx * kyy)))
    th = math.acos(c)
    return sb2 + sw2 / (2 * math.pi) * math.sqrt(kxx * kyy) * (math.sin(th) + (math.pi - th) * c)


def gp_posterior_naive(K_xx, K_sx, K_ss, y, noise):
    """Posterior mean and covariance with an explicit inverse."""
    A = np.linalg.inv(K_xx + noise * np.eye(len(y)))
    return K_sx @ A @ y, K_ss - K_sx @ A @ K_sx.T


def average_ranks(a):
    """1-based ranks, ties sharing the mean of the positions they occupy."""
    a = list(a)
    order = sorted(range(len(a)), key=lambda i: a[i])
    ranks = [0.0] * len(a)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and a[order[j + 1]] == a[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def pearson(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    am, bm = a - a.mean(), b - b.mean()
    return float(am @ bm / math.sqrt((am @ am) * (bm @ bm)))


def w1_brute(a, b):
    """Optimal matching cost over all permutations (tiny inputs only)."""
    n = len(a)
    return min(sum(abs(a[i] - b[p[i]]) for i in range(n)) for p in itertools.permutations(range(n))) / n


def w1_sorted_loop(a, b):
    sa, sb = sorted(a), sorted(b)
    return sum(abs(x - y) for x, y in zip(sa, sb)) / len(sa)


def mean_var_loop(F):
    """Per-column mean and 1/N variance with explicit loops."""
    N, n = len(F), len(F[0])
    mu, var = [], []
    for j in range(n):
        m = sum(F[i][j] for i in range(N)) / N
        mu.append(m)
        var.append(sum((F[i][j] - m) ** 2 for i in range(N)) / N)
    return np.array(mu), np.array(var)

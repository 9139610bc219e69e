"""Evaluation quantities: point errors, rank correlation, MSLL, kernel
reconstruction, spectrum concentration and 1-D Wasserstein distance."""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateInput, ShapeMismatch
from .linalg import sym_eigvals


def _pair(a, b, what="inputs"):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ShapeMismatch(f"{what} have lengths {a.size} and {b.size}")
    if a.size == 0:
        raise ShapeMismatch(f"{what} are empty")
    return a, b


def regression_errors(y, yhat):
    """(RMSE, MAE)."""
    y, yhat = _pair(y, yhat)
    r = yhat - y
    return float(np.sqrt(np.mean(r * r))), float(np.mean(np.abs(r)))


def spearman(y, yhat):
    """Pearson correlation of average-tie ranks.

    Raises :class:`DegenerateInput` when either vector is constant.
    """
    y, yhat = _pair(y, yhat)
    if y.size < 2:
        raise ShapeMismatch("spearman needs at least two points")
    ra, rb = rankdata(y), rankdata(yhat)
    ra -= ra.mean()
    rb -= rb.mean()
    na, nb = np.sqrt(ra @ ra), np.sqrt(rb @ rb)
    if na == 0 or nb == 0:
        raise DegenerateInput("spearman is undefined for a constant vector")
    return float(np.clip(ra @ rb / (na * nb), -1.0, 1.0))


def msll(y, mu, var, variance_floor=1e-6):
    """Mean Gaussian negative log-likelihood ``1/(2N) sum[log(2 pi s2) + r^2/s2]``.

    Variances below ``variance_floor`` are raised to it; see
    :func:`msll_floor_count` for how many were.
    """
    if not variance_floor > 0:
        raise ValueError("variance_floor must be positive")
    y, mu = _pair(y, mu)
    var = np.broadcast_to(np.asarray(var, dtype=float), y.shape)
    s2 = np.maximum(var, variance_floor)
    r = y - mu
    return float(0.5 * np.mean(np.log(2.0 * np.pi * s2) + r * r / s2))


def msll_floor_count(var, variance_floor=1e-6):
    return int(np.sum(np.asarray(var, dtype=float) < variance_floor))


def kernel_recon_error(K_true, K_est):
    """(max absolute entry difference, ||K_true - K_est||_F / ||K_true||_F)."""
    K_true = np.asarray(K_true, dtype=float)
    K_est = np.asarray(K_est, dtype=float)
    if K_true.shape != K_est.shape:
        raise ShapeMismatch(f"matrix shapes {K_true.shape} and {K_est.shape} differ")
    D = K_true - K_est
    ref = np.linalg.norm(K_true)
    fro = np.linalg.norm(D) / ref if ref > 0 else np.linalg.norm(D)
    return float(np.max(np.abs(D))), float(fro)


def eigen_gap_ratio(K, head):
    """Mean of the ``head`` largest eigenvalues over the mean of the rest."""
    ev = sym_eigvals(K)
    if not 1 <= head < ev.size:
        raise ValueError(f"head must lie in [1, {ev.size - 1}]")
    return float(np.mean(ev[:head]) / max(np.mean(ev[head:]), 1e-12))


def empirical_w1(a, b):
    """1-D Wasserstein-1 distance between two equal-size samples."""
    a, b = _pair(a, b, "sample sets")
    return float(np.mean(np.abs(np.sort(a) - np.sort(b))))


@dataclass
class MetricReport:
    values: dict
    meta: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def to_json(self):
        return {"metrics": dict(self.values), "flags": dict(self.flags), "meta": dict(self.meta)}

    def dumps(self):
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def csv_row(self):
        """Header and one data row, metrics then flags, keys sorted."""
        keys = sorted(self.values)
        fkeys = sorted(self.flags)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys + [f"flag_{k}" for k in fkeys])
        w.writerow([repr(float(self.values[k])) for k in keys] + [self.flags[k] for k in fkeys])
        return buf.getvalue()


def regression_report(y, yhat, var=None, variance_floor=1e-6, meta=None):
    """RMSE, MAE, Spearman and (given variances) MSLL in one report."""
    rmse, mae = regression_errors(y, yhat)
    values = {"rmse": rmse, "mae": mae}
    flags = {}
    try:
        values["spearman"] = spearman(y, yhat)
    except DegenerateInput:
        values["spearman"] = 0.0
        flags["spearman"] = "constant input"
    meta = dict(meta or {})
    meta["n"] = int(np.size(y))
    if var is not None:
        values["msll"] = msll(y, yhat, var, variance_floor)
        meta["msll_floor_count"] = msll_floor_count(var, variance_floor)
        if meta["msll_floor_count"]:
            flags["msll"] = f"variance floor applied at {meta['msll_floor_count']} points"
    return MetricReport(values, meta, flags)

"""Multi-source datasets: synthetic generators, CSV ingestion and splits."""

import csv
import datetime as dt
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels as kern
from .errors import IoError, ParseError, SchemaError, ShapeMismatch
from .linalg import DEFAULT_JITTER, make_rng, mvn_sample
from .model import atomic_write_text

MAX_GP_POINTS = 10_000


class EmptyPartition(UserWarning):
    pass


@dataclass
class Dataset:
    """Per-source input blocks (each n x D_m), targets and optional labels."""

    sources: list
    y: np.ndarray
    labels: np.ndarray = None
    names: list = None

    def __post_init__(self):
        if not self.sources:
            raise ShapeMismatch("a dataset needs at least one source")
        blocks = []
        for m, A in enumerate(self.sources):
            A = np.asarray(A, dtype=float)
            A = A[:, None] if A.ndim == 1 else A
            if A.ndim != 2:
                raise ShapeMismatch(f"source {m} must be 1-D or 2-D")
            blocks.append(A)
        self.sources = blocks
        self.y = np.asarray(self.y, dtype=float).ravel()
        n = self.y.size
        for m, A in enumerate(blocks):
            if A.shape[0] != n:
                raise ShapeMismatch(f"source {m} has {A.shape[0]} rows, targets have {n}")
            if not np.all(np.isfinite(A)):
                raise ValueError(f"source {m} contains non-finite values")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("targets contain non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int).ravel()
            if self.labels.size != n:
                raise ShapeMismatch("one label per row required")
        if self.names is None:
            self.names = [[f"x{m}_{d}" for d in range(A.shape[1])] for m, A in enumerate(blocks)]

    @property
    def n(self):
        return self.y.size

    @property
    def M(self):
        return len(self.sources)

    @property
    def dims(self):
        return [A.shape[1] for A in self.sources]

    def __len__(self):
        return self.n

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return Dataset(
            [A[idx] for A in self.sources],
            self.y[idx],
            None if self.labels is None else self.labels[idx],
            self.names,
        )


# --- synthetic generators ----------------------------------------------------


def sample_gp_prior(spec, params, Xs, noise, rng, jitter_schedule=DEFAULT_JITTER):
    """One draw of ``y ~ N(0, K + noise I)`` at multi-source points ``Xs``."""
    if noise < 0:
        raise ValueError("noise variance must be non-negative")
    K = kern.kernel_matrix(spec, params, Xs)
    n = K.shape[0]
    if n > MAX_GP_POINTS:
        raise ValueError(f"dense GP sampling is limited to {MAX_GP_POINTS} points, got {n}")
    return mvn_sample(np.zeros(n), K + noise * np.eye(n), 1, make_rng(rng), jitter_schedule)[0]


def gen_synth_tanh(n, noise=0.05, rng=0):
    """``y = x3 tanh(2 x1 cos^2(pi x2 / 50)) + eps``, three 1-D sources.

    ``x1, x3 ~ U[-1, 1]`` and ``x2 ~ U[0, 100]`` (two periods of the cosine
    factor); ``eps ~ N(0, noise^2)``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    rng = make_rng(rng)
    x1 = rng.uniform(-1.0, 1.0, n)
    x2 = rng.uniform(0.0, 100.0, n)
    x3 = rng.uniform(-1.0, 1.0, n)
    y = synth_tanh_target(x1, x2, x3) + noise * rng.standard_normal(n)
    return Dataset([x1, x2, x3], y, names=[["x1"], ["x2"], ["x3"]])


def synth_tanh_target(x1, x2, x3):
    return x3 * np.tanh(2.0 * x1 * np.cos(np.pi * x2 / 50.0) ** 2)


# Mixture used for the synthetic composite-kernel data.  Frequencies sit in
# the band the default mixture initialization covers for x2 in [0, 2].
SYNTH_SM = {"weights": [0.5, 0.5], "means": [1.0, 3.0], "scales": [0.01, 0.05]}


def synthetic_kernel(combine="product", sm=None):
    """Linear kernel on source 0 combined with a 2-component mixture on source 1."""
    sm = sm or SYNTH_SM
    lin = kern.linear(source=0)
    mix = kern.spectral_mixture(len(sm["weights"]), source=1)
    spec = kern.KernelSpec(combine, children=(lin, mix))
    theta = np.concatenate([kern.pack(lin, {"variance": 1.0}), _sm_theta(mix, sm)])
    return spec, theta


def _sm_theta(spec, sm):
    values = {}
    for q in range(spec.n_components):
        values[f"weight{q}"] = sm["weights"][q]
        values[f"mean{q}"] = sm["means"][q]
        values[f"scale{q}"] = sm["scales"][q]
    return kern.pack(spec, values)


def gen_gp_synthetic(n=3000, combine="product", noise=0.01, rng=0, sm=None):
    """``x1 ~ U[0, 1]``, ``x2 ~ U[0, 2]``, ``y ~ GP(0, K_lin(x1) (op) K_sm(x2))``.

    ``combine`` is ``"product"`` or ``"sum"``; ``noise`` is the observation
    noise variance added to the draw.
    """
    rng = make_rng(rng)
    x1 = rng.uniform(0.0, 1.0, n)
    x2 = rng.uniform(0.0, 2.0, n)
    spec, theta = synthetic_kernel(combine, sm)
    y = sample_gp_prior(spec, theta, [x1, x2], noise, rng)
    return Dataset([x1, x2], y, names=[["x1"], ["x2"]])


def gen_periodic_1d(n_train=16, noise=1e-4, period=2 * np.pi, x_range=(-2 * np.pi, 2 * np.pi), design="grid", rng=0):
    """``sin(2 pi x / period)`` plus ``N(0, noise)`` at ``n_train`` points.

    ``design="grid"`` spaces the points evenly over ``x_range`` (this keeps
    the training kernel matrix well conditioned); ``"uniform"`` draws them.
    Both sources hold the same coordinate, so one model sees ``x`` through
    an NN branch and a periodic kernel branch.
    """
    rng = make_rng(rng)
    if design == "grid":
        x = np.linspace(x_range[0], x_range[1], n_train)
    elif design == "uniform":
        x = np.sort(rng.uniform(x_range[0], x_range[1], n_train))
    else:
        raise ValueError(f"unknown design {design!r}")
    y = np.sin(2 * np.pi * x / period) + np.sqrt(noise) * rng.standard_normal(n_train)
    return Dataset([x, x.copy()], y, names=[["x"], ["x"]])


def gen_periodic_classes(n=400, period=2 * np.pi, rng=0):
    """Two-class toy: label 1 where ``sin(2 pi t / period) + 0.5 u > 0``.

    Source 0 is ``u ~ U[-1, 1]`` and source 1 is ``t ~ U[0, 4 period]``.
    """
    rng = make_rng(rng)
    u = rng.uniform(-1.0, 1.0, n)
    t = rng.uniform(0.0, 4.0 * period, n)
    labels = (np.sin(2 * np.pi * t / period) + 0.5 * u > 0).astype(int)
    return Dataset([u, t], labels.astype(float), labels=labels, names=[["u"], ["t"]])


# --- splits --------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    """``random``: ``ratio`` of rows to train, ``val_ratio`` to validation.
    ``threshold``: rows with coordinate < ``train_max`` train, < ``val_max``
    validate, the rest test.
    """

    kind: str = "random"
    ratio: float = 0.5
    val_ratio: float = 0.0
    seed: int = 0
    source: int = 0
    coord: int = 0
    train_max: float = None
    val_max: float = None

    def __post_init__(self):
        if self.kind == "random":
            if not 0 < self.ratio < 1 or self.val_ratio < 0 or self.ratio + self.val_ratio > 1:
                raise ValueError("need 0 < ratio < 1 and ratio + val_ratio <= 1")
        elif self.kind == "threshold":
            if self.train_max is None:
                raise ValueError("threshold split needs train_max")
            if self.val_max is not None and self.val_max < self.train_max:
                raise ValueError("thresholds must satisfy train_max <= val_max")
        else:
            raise ValueError(f"unknown split kind {self.kind!r}")


def split_indices(dataset, spec):
    n = dataset.n
    if spec.kind == "random":
        perm = make_rng(spec.seed).permutation(n)
        n_tr = int(round(spec.ratio * n))
        n_va = int(round(spec.val_ratio * n))
        parts = perm[:n_tr], perm[n_tr : n_tr + n_va], perm[n_tr + n_va :]
        return tuple(np.sort(p) for p in parts)
    if spec.source >= dataset.M or spec.coord >= dataset.dims[spec.source]:
        raise ShapeMismatch(f"split reads source {spec.source} coordinate {spec.coord}, which does not exist")
    t = dataset.sources[spec.source][:, spec.coord]
    val_max = spec.train_max if spec.val_max is None else spec.val_max
    idx = np.arange(n)
    return idx[t < spec.train_max], idx[(t >= spec.train_max) & (t < val_max)], idx[t >= val_max]


def split(dataset, spec):
    """(train, val, test); warns with :class:`EmptyPartition` for empty parts."""
    parts = split_indices(dataset, spec)
    for name, idx in zip(("train", "val", "test"), parts):
        if idx.size == 0 and not (name == "val" and spec.kind == "random" and spec.val_ratio == 0):
            warnings.warn(f"{name} partition is empty", EmptyPartition, stacklevel=2)
    return tuple(dataset.subset(idx) for idx in parts)


# --- CSV ---------------------------------------------------------------------------


@dataclass
class CsvSchema:
    """Column mapping: ``sources`` is a list of column-name lists (one per
    source), ``target`` and ``label`` name single columns.  ``dates`` maps a
    column to an ISO epoch date; its ISO-date values become days since it.
    """

    sources: list
    target: str = None
    label: str = None
    dates: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, doc):
        if not isinstance(doc, dict) or "sources" not in doc:
            raise SchemaError("schema needs a 'sources' list")
        srcs = [[c] if isinstance(c, str) else list(c) for c in doc["sources"]]
        if not srcs or any(not s for s in srcs):
            raise SchemaError("schema needs at least one non-empty source")
        unknown = set(doc) - {"sources", "target", "label", "dates"}
        if unknown:
            raise SchemaError(f"unknown schema keys {sorted(unknown)}")
        out = cls(srcs, doc.get("target"), doc.get("label"), dict(doc.get("dates", {})))
        if out.target is None and out.label is None:
            raise SchemaError("schema needs a target or label column")
        return out


def _parse_value(text, col, row, epoch):
    if epoch is not None:
        try:
            return float((dt.date.fromisoformat(text.strip()) - epoch).days)
        except ValueError:
            pass
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"cannot parse {text!r} as a number", row=row, column=col) from None
    if not np.isfinite(v):
        raise ParseError(f"non-finite value {text!r}", row=row, column=col)
    return v


def load_csv(path, schema):
    """Read a headed CSV into a :class:`Dataset` according to ``schema``.

    Rows are numbered from 1 (the first line after the header).
    """
    if isinstance(schema, dict):
        schema = CsvSchema.from_json(schema)
    try:
        with open(path, newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError(f"{path} is empty") from None
    wanted = [c for s in schema.sources for c in s]
    wanted += [c for c in (schema.target, schema.label) if c is not None]
    missing = [c for c in wanted if c not in header]
    if missing:
        raise SchemaError(f"columns {missing} not found in header {header}")
    pos = {c: header.index(c) for c in wanted}
    epochs = {c: dt.date.fromisoformat(e) for c, e in schema.dates.items()}
    cols = {c: [] for c in wanted}
    for r, rec in enumerate(reader, start=1):
        if not rec or all(not f.strip() for f in rec):
            continue
        if len(rec) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(rec)}", row=r)
        for c in wanted:
            cols[c].append(_parse_value(rec[pos[c]], c, r, epochs.get(c)))
    blocks = [np.column_stack([cols[c] for c in s]) if cols[s[0]] else np.zeros((0, len(s))) for s in schema.sources]
    labels = None
    if schema.label is not None:
        lab = np.array(cols[schema.label])
        if not np.all(lab == np.round(lab)):
            raise ParseError("labels must be integers", column=schema.label)
        labels = lab.astype(int)
    y = np.array(cols[schema.target]) if schema.target is not None else labels.astype(float)
    return Dataset(blocks, y, labels, [list(s) for s in schema.sources])


def write_csv(dataset, path):
    """Write ``dataset`` with its column names; returns the matching schema."""
    names = [c for s in dataset.names for c in s]
    if len(set(names)) != len(names):
        names = [f"s{m}_{c}" for m, s in enumerate(dataset.names) for c in s]
    groups, off = [], 0
    for A in dataset.sources:
        groups.append(names[off : off + A.shape[1]])
        off += A.shape[1]
    header = names + ["y"] + (["label"] if dataset.labels is not None else [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    X = np.hstack(dataset.sources)
    for i in range(dataset.n):
        row = [repr(float(v)) for v in X[i]] + [repr(float(dataset.y[i]))]
        if dataset.labels is not None:
            row.append(str(int(dataset.labels[i])))
        w.writerow(row)
    try:
        atomic_write_text(path, buf.getvalue())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return {"sources": groups, "target": "y", **({"label": "label"} if dataset.labels is not None else {})}

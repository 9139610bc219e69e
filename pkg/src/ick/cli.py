"""Command-line front end.

Every subcommand reads one JSON config (``--config``), writes its outputs to
``--out`` and embeds the resolved config and seed in ``metrics.json``.
Wall-clock timings go to ``timing.json`` so ``metrics.json`` is
reproducible byte for byte.

Exit codes: 0 success, 2 configuration error, 3 runtime or numerical
error, 4 I/O or data-file error.
"""

import argparse
import csv
import io
import json
import os
import sys
import time

import numpy as np

from . import experiments as exp
from .data import (
    SplitSpec,
    gen_gp_synthetic,
    gen_periodic_1d,
    gen_periodic_classes,
    gen_synth_tanh,
    load_csv,
    split,
    write_csv,
)
from .ensemble import EnsembleConfig, ensemble_stats, save_ensemble, train_ensemble
from .errors import ConfigError, DataError, IckError
from .linalg import derive_seed
from .metrics import MetricReport, regression_report
from .model import ModelSpec, TrainConfig, atomic_write_text, save_checkpoint, train

EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 2, 3, 4


# --- config handling ------------------------------------------------------------


def _block(cfg, name, required=True):
    if name not in cfg:
        if required:
            raise ConfigError("missing block", field=name)
        return {}
    if not isinstance(cfg[name], dict):
        raise ConfigError("must be an object", field=name)
    return cfg[name]


def _parse(field, fn, *args, **kw):
    """Run a constructor, reporting bad values against ``field``."""
    try:
        return fn(*args, **kw)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc), field=field) from exc


def load_config(path, seed=None):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", field="config") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("top level must be an object", field="config")
    if seed is not None:
        cfg["seed"] = seed
    if not isinstance(cfg.get("seed"), int) or isinstance(cfg.get("seed"), bool):
        raise ConfigError("an integer seed is required (config or --seed)", field="seed")
    return cfg


_GENERATORS = {
    "gp_synthetic": lambda d, rng: gen_gp_synthetic(
        d.get("n", 3000), d.get("combine", "product"), d.get("noise", 0.01), rng
    ),
    "synth_tanh": lambda d, rng: gen_synth_tanh(d.get("n", 1000), d.get("noise", 0.05), rng),
    "periodic_1d": lambda d, rng: gen_periodic_1d(
        d.get("n", 16), d.get("noise", 1e-4), d.get("period", exp.PERIOD), design=d.get("design", "grid"), rng=rng
    ),
    "periodic_classes": lambda d, rng: gen_periodic_classes(d.get("n", 400), d.get("period", exp.PERIOD), rng),
}


def build_dataset(cfg):
    d = _block(cfg, "dataset")
    if "csv" in d:
        return load_csv(d["csv"], d.get("schema", {}))
    gen = d.get("generator")
    if gen not in _GENERATORS:
        raise ConfigError(f"unknown generator {gen!r}; choose from {sorted(_GENERATORS)} or give 'csv'", field="dataset.generator")
    return _parse("dataset", _GENERATORS[gen], d, derive_seed(cfg["seed"], 0))


def build_split(cfg, ds):
    s = dict(cfg.get("split", {"kind": "random", "ratio": 0.5}))
    s.setdefault("seed", cfg["seed"])
    spec = _parse("split", SplitSpec, **s)
    return _parse("split", split, ds, spec)


def build_train(cfg, block="train"):
    t = dict(_block(cfg, block, required=False))
    t.setdefault("seed", cfg["seed"])
    return _parse(block, TrainConfig.from_json, t)


def build_model(cfg, ds):
    return _parse("model", ModelSpec.from_json, _block(cfg, "model"), ds)


# --- outputs ------------------------------------------------------------------------


def _write_json(path, doc):
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_rows(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    atomic_write_text(path, buf.getvalue())


def _metrics_doc(command, cfg, report):
    doc = report.to_json() if isinstance(report, MetricReport) else {"metrics": report}
    doc.update({"command": command, "seed": cfg["seed"], "config": cfg})
    return doc


def _finish(out, command, cfg, report, started):
    _write_json(os.path.join(out, "metrics.json"), _metrics_doc(command, cfg, report))
    _write_json(os.path.join(out, "timing.json"), {"wall_time_s": time.perf_counter() - started})


def _prediction_rows(ds, yhat, var=None):
    X = np.hstack(ds.sources)
    header = [c for s in ds.names for c in s] + ["y", "yhat"] + (["mu", "var"] if var is not None else [])
    rows = []
    for i in range(ds.n):
        r = list(X[i]) + [ds.y[i], yhat[i]]
        if var is not None:
            r += [yhat[i], var[i]]
        rows.append(r)
    return header, rows


# --- subcommands -----------------------------------------------------------------------


def cmd_gen(cfg, out, threads):
    ds = build_dataset(cfg)
    schema = write_csv(ds, os.path.join(out, "data.csv"))
    _write_json(os.path.join(out, "schema.json"), schema)
    return MetricReport({"n": float(ds.n), "n_sources": float(ds.M)}, {"dims": ds.dims})


def cmd_train(cfg, out, threads):
    ds = build_dataset(cfg)
    tr, _, te = build_split(cfg, ds)
    tcfg = build_train(cfg)
    model = build_model(cfg, tr).build(cfg["seed"], tr)
    model, trace = train(model, tr, tcfg)
    save_checkpoint(os.path.join(out, "checkpoint.json"), model, cfg["seed"], tcfg, trace)
    yhat = model.predict(te)
    _write_rows(os.path.join(out, "predictions.csv"), *_prediction_rows(te, yhat))
    _write_rows(os.path.join(out, "loss.csv"), ["epoch", "loss"], [(i, v) for i, v in enumerate(trace)])
    return regression_report(te.y, yhat, meta={"final_train_loss": trace[-1]})


def cmd_ensemble(cfg, out, threads):
    ds = build_dataset(cfg)
    tr, _, te = build_split(cfg, ds)
    e = _block(cfg, "ensemble")
    ecfg = _parse(
        "ensemble",
        EnsembleConfig,
        n_members=e.get("n_members", 10),
        train=build_train(cfg),
        init=e.get("init", "nngp"),
        base_seed=e.get("base_seed", cfg["seed"]),
        workers=threads,
    )
    template = build_model(cfg, tr)
    members = train_ensemble(template, tr, ecfg)
    mu, var = ensemble_stats(members, te)
    floor = _block(cfg, "metrics", required=False).get("variance_floor", 1e-6)
    report = regression_report(te.y, mu, var, variance_floor=floor)
    save_ensemble(os.path.join(out, "ensemble"), members, ecfg, _block(cfg, "model"), report.values)
    _write_rows(os.path.join(out, "predictions.csv"), *_prediction_rows(te, mu, var))
    return report


def cmd_sweep_p(cfg, out, threads):
    s = _block(cfg, "sweep", required=False)
    rows = _parse(
        "sweep",
        exp.nystrom_sweep,
        ps=tuple(s.get("ps", (2, 4, 8, 16, 32))),
        seeds=[derive_seed(cfg["seed"], k) for k in range(s.get("n_seeds", 5))],
        n=s.get("n", 64),
        lengthscale=s.get("lengthscale", 1.0),
    )
    keys = ["p", "seed", "max_abs", "frobenius", "jitter", "wall_time"]
    _write_rows(os.path.join(out, "sweep.csv"), keys, [[r[k] for k in keys] for r in rows])
    ps, med = exp.median_by_p(rows)
    return MetricReport({f"median_frobenius_p{p}": m for p, m in zip(ps, med)})


def cmd_spectrum(cfg, out, threads):
    s = _block(cfg, "spectrum", required=False)
    res = _parse("spectrum", exp.spectrum, n=s.get("n", 50), head=s.get("head", 5))
    _write_rows(os.path.join(out, "spectrum.csv"), ["index", "eigenvalue"], list(enumerate(res["eigenvalues"])))
    return MetricReport({"eigen_gap_ratio": res["ratio"]}, {"head": res["head"]})


def cmd_compare_gp(cfg, out, threads):
    c = _block(cfg, "compare", required=False)
    grid = sorted(c.get("ne_grid", (10, 50, 100)))
    n_seeds = c.get("n_base_seeds", 1)
    kw = dict(
        hidden=tuple(c.get("hidden", (256,))),
        p=c.get("p", 16),
        epochs=c.get("epochs", 3000),
        data_noise=c.get("data_noise", 1e-4),
        oracle_noise=c.get("oracle_noise"),
        workers=threads,
    )
    w1_rows, values = [], {}
    for k in range(n_seeds):
        base = cfg["seed"] + 1000 * k
        res = _parse("compare", exp.compare_gp, grid[-1], base, **kw)
        F, post = res["F"], res["posterior"]
        for N in grid:
            w1_rows.append((base, N, exp.marginal_w1(F[:N], post, derive_seed(base, N))))
        if k == 0:
            mean_gap, frac = exp.gp_agreement(F, post)
            values.update({"mean_abs_mu_gap": mean_gap, "frac_sigma_within_2x": frac})
            mu = F.mean(axis=0)
            sd = np.sqrt(np.mean((F - mu) ** 2, axis=0))
            rows = zip(res["X_test"], mu, sd, post.mean, np.sqrt(np.maximum(post.var, 0.0)))
            _write_rows(os.path.join(out, "series.csv"), ["x", "mu_hat", "sigma_hat", "mu_exact", "sigma_exact"], rows)
    _write_rows(os.path.join(out, "w1.csv"), ["base_seed", "n_members", "w1"], w1_rows)
    for N in grid:
        values[f"median_w1_ne{N}"] = float(np.median([w for _, n, w in w1_rows if n == N]))
    return MetricReport(values)


def cmd_classify(cfg, out, threads):
    c = _block(cfg, "classify", required=False)
    res = _parse("classify", exp.classification_toy, seed=cfg["seed"], n=c.get("n", 600), epochs=c.get("epochs", 100))
    te, probs = res["test"], res["probs"]
    X = np.hstack(te.sources)
    rows = [list(X[i]) + [int(te.labels[i]), int(probs[i].argmax()), probs[i, 1]] for i in range(te.n)]
    _write_rows(os.path.join(out, "predictions.csv"), ["u", "t", "label", "predicted", "prob_1"], rows)
    return MetricReport({"accuracy": res["accuracy"], "final_train_loss": res["final_loss"]})


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "ensemble": cmd_ensemble,
    "sweep-p": cmd_sweep_p,
    "spectrum": cmd_spectrum,
    "compare-gp": cmd_compare_gp,
    "classify": cmd_classify,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="ick", description="Implicit composite kernel experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON experiment config (optional for analysis commands)")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker processes for ensemble members")
    return ap


def run(argv=None):
    args = build_parser().parse_args(argv)
    if args.config is None:
        if args.command in ("gen", "train", "ensemble"):
            raise ConfigError("this command needs --config", field="config")
        cfg = {"seed": args.seed if args.seed is not None else 0}
    else:
        cfg = load_config(args.config, args.seed)
    if args.threads < 1:
        raise ConfigError("must be at least 1", field="threads")
    started = time.perf_counter()
    os.makedirs(args.out, exist_ok=True)
    report = COMMANDS[args.command](cfg, args.out, args.threads)
    _finish(args.out, args.command, cfg, report, started)
    return report


def main(argv=None):
    try:
        run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DataError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (IckError, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())

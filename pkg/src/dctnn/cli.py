"""Command-line driver.

Every subcommand reads an optional INI file (one section per subcommand,
flags win over file values), writes its artifacts into ``--out`` and
finishes with ``manifest.json``: the resolved configuration, seed, SHA-256
of every artifact, wall-clock time and library versions.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, fields

import numpy as np

from . import __version__
from .conformal import InsufficientCalibrationError, auc_intervals
from .decomp import RankDeficientError
from .experiments import (coverage_experiment, fit_metrics, paired_experiment, selection,
                          split_latents, uq)
from .network import DCTNNClassifier, DCTNNRegressor
from .simgen import SimConfig, SimDataset, gen_dataset

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
MANIFEST = "manifest.json"


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# -- option specs ----------------------------------------------------------------

def _tuple_of(kind):
    def parse(text):
        if isinstance(text, (tuple, list)):
            return tuple(kind(v) for v in text)
        parts = [p for p in str(text).replace("(", "").replace(")", "").split(",") if p.strip()]
        return tuple(kind(p) for p in parts)
    parse.__name__ = f"tuple[{kind.__name__}]"
    return parse


def _boolean(text):
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(kind):
    def parse(text):
        if text is None or str(text).strip().lower() in ("", "none"):
            return None
        return kind(text)
    parse.__name__ = f"optional[{getattr(kind, '__name__', 'value')}]"
    return parse


@dataclass(frozen=True)
class Opt:
    key: str
    parse: object
    default: object
    help: str = ""
    choices: tuple | None = None

    @property
    def flag(self):
        return "--" + self.key.replace("_", "-")


def _sim_options():
    kinds = {"dims": _tuple_of(int), "tucker_ranks": _tuple_of(int),
             "refinement_scale": _tuple_of(float), "refinement_shape": _tuple_of(int),
             "split": _tuple_of(float), "labeler_core_width": _optional(_tuple_of(int)),
             "labeler_ref_width": _optional(_tuple_of(int)), "logit_target": _optional(float)}
    out = []
    for f in fields(SimConfig):
        default = f.default
        parse = kinds.get(f.name, type(default))
        choices = ("tucker", "cp") if f.name == "regime" else None
        out.append(Opt(f.name, parse, default, choices=choices))
    return out


PATHS = {
    "simulate": [Opt("out", str, None, "output dataset directory")],
    "fit": [Opt("data", str, None, "dataset directory"), Opt("out", str, None, "model directory")],
    "uq": [Opt("model", str, None, "fitted model directory"),
           Opt("data", str, None, "dataset directory (default: the one the model was fitted on)"),
           Opt("out", str, None, "output directory")],
    "select": [Opt("model_a", str, None, "first fitted model"),
               Opt("model_b", str, None, "second fitted model"),
               Opt("data", str, None, "dataset directory (default: the models' dataset)"),
               Opt("out", str, None, "output directory")],
    "coverage": [Opt("data", str, None, "simulated dataset whose configuration is replicated"),
                 Opt("out", str, None, "output directory")],
}

FIT_OPTIONS = [
    Opt("structure", str, "tucker", choices=("tucker", "cp")),
    Opt("ranks", _tuple_of(int), (4, 4, 4), "Tucker ranks"),
    Opt("cp_rank", int, 16),
    Opt("refinement_shape", _tuple_of(int), (3, 3, 3)),
    Opt("depth", int, 3),
    Opt("widths", _optional(_tuple_of(int)), None, "hidden core widths (default: core shape)"),
    Opt("ref_widths", _optional(_tuple_of(int)), None, "hidden refinement widths"),
    Opt("layer_norm", _boolean, True),
    Opt("truncation", float, math.inf),
    Opt("lambda", float, 0.1, "clipped-L1 penalty level"),
    Opt("tau", float, 0.05, "clipping threshold"),
    Opt("lr", float, 1e-3),
    Opt("weight_decay", float, 1e-4),
    Opt("batch_size", int, 128),
    Opt("epochs", int, 10),
    Opt("hooi_iters", int, 50),
    Opt("als_iters", int, 200),
    Opt("decomp_tol", float, 1e-6),
    Opt("link", str, "sigmoid", choices=("sigmoid", "identity")),
    Opt("seed", int, 0),
]

CONFORMAL_OPTIONS = [
    Opt("k_train", int, 50), Opt("k_cal", int, 10), Opt("omega", float, 10.0),
    Opt("alpha", float, 0.1), Opt("n_grid", int, 200), Opt("inflated", _boolean, False),
]

OPTIONS = {
    "simulate": PATHS["simulate"] + _sim_options(),
    "fit": PATHS["fit"] + FIT_OPTIONS,
    "uq": PATHS["uq"] + CONFORMAL_OPTIONS + [
        Opt("smoother", str, "knn", "'knn', or 'model' to set the smoothed probability to the "
            "prediction", choices=("knn", "model"))],
    "select": PATHS["select"] + [
        Opt("k", int, 8), Opt("omega", float, 10.0), Opt("alpha", float, 0.1),
        Opt("n_grid", int, 200)],
    "coverage": PATHS["coverage"] + [
        Opt("reps", int, 20), Opt("alpha", float, 0.1), Opt("n", int, 600),
        Opt("regime", str, "tucker", choices=("tucker", "cp")),
        Opt("structure", str, "tucker", choices=("tucker", "cp")),
        Opt("seed", int, 0), Opt("epochs", _optional(int), None,
                                 "training epochs (default: keep the full-size step count)"),
        Opt("nested_alphas", _tuple_of(float), (0.05, 0.25)),
        Opt("oracle_fed", _boolean, False),
        Opt("selector_reps", int, 0, "paired Tucker/CP fits for the wrong-selection rate"),
    ],
}


# -- config resolution -------------------------------------------------------------

def read_ini(path, section):
    parser = configparser.ConfigParser()
    try:
        with open(path) as f:
            parser.read_file(f)
    except (OSError, configparser.Error) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not parser.has_section(section):
        return dict(parser.defaults())
    return dict(parser.items(section))


def resolve(command, args) -> dict:
    """Defaults, then the INI section, then explicit flags."""
    opts = {o.key: o for o in OPTIONS[command]}
    cfg = {k: o.default for k, o in opts.items()}
    if args.config:
        for key, text in read_ini(args.config, command).items():
            key = key.replace("-", "_")
            if key not in opts:
                raise ConfigError(f"unknown key {key!r} in section [{command}]")
            cfg[key] = _parse(opts[key], text)
    for key in opts:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _parse(opt: Opt, text):
    try:
        value = opt.parse(text)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{opt.key}: {e}") from e
    if opt.choices and value not in opt.choices:
        raise ConfigError(f"{opt.key} must be one of {opt.choices}, got {value!r}")
    return value


def _require(cfg, *keys):
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + k.replace("_", "-")
                                                                    for k in missing))


# -- artifacts -------------------------------------------------------------------------

def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def tree_hashes(directory):
    out = {}
    for root, _, files in os.walk(directory):
        for name in sorted(files):
            path = os.path.join(root, name)
            rel = os.path.relpath(path, directory)
            if rel != MANIFEST:
                out[rel] = sha256(path)
    return dict(sorted(out.items()))


def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, (float, np.floating)) else v for v in row])


def write_json(path, obj):
    with open(path, "w") as f:
        json.dump(_plain(obj), f, indent=2, sort_keys=True)
        f.write("\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def versions():
    import scipy
    import sklearn
    return {"dctnn": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "scikit-learn": sklearn.__version__}


def write_manifest(out, command, cfg, seed, started, inputs=None):
    manifest = {"command": command, "config": cfg, "seed": seed, "inputs": inputs or {},
                "artifacts": tree_hashes(out), "wall_clock_seconds": time.perf_counter() - started,
                "versions": versions()}
    write_json(os.path.join(out, MANIFEST), manifest)
    return manifest


def read_manifest(directory):
    path = os.path.join(directory, MANIFEST)
    if not os.path.exists(path):
        raise DataError(f"no {MANIFEST} in {directory}")
    with open(path) as f:
        return json.load(f)


def load_dataset(directory) -> SimDataset:
    if not directory or not os.path.isdir(directory):
        raise DataError(f"dataset directory not found: {directory}")
    try:
        return SimDataset.load(directory)
    except (OSError, KeyError, ValueError) as e:
        raise DataError(f"cannot load dataset {directory}: {e}") from e


def dataset_id(directory):
    """Content hash of a dataset: the tensors and the sample table."""
    h = hashlib.sha256()
    for name in ("X.bin", "samples.csv"):
        path = os.path.join(directory, name)
        if not os.path.exists(path):
            raise DataError(f"{path} missing")
        h.update(sha256(path).encode())
    return h.hexdigest()


def load_model(directory):
    if not directory or not os.path.exists(os.path.join(directory or "", "estimator.json")):
        raise DataError(f"no fitted model checkpoint in {directory}")
    with open(os.path.join(directory, "dataset.json")) as f:
        origin = json.load(f)
    return DCTNNClassifier.load(directory), origin


# -- subcommands ---------------------------------------------------------------------

def cmd_simulate(cfg, started):
    _require(cfg, "out")
    sim = {f.name: cfg[f.name] for f in fields(SimConfig)}
    try:
        sim_cfg = SimConfig(**sim)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    ds = gen_dataset(sim_cfg)
    ds.save(cfg["out"])
    write_json(os.path.join(cfg["out"], "summary.json"), ds.summary())
    return write_manifest(cfg["out"], "simulate", cfg, cfg["seed"], started)


def cmd_fit(cfg, started):
    _require(cfg, "data", "out")
    ds = load_dataset(cfg["data"])
    klass = DCTNNClassifier if cfg["link"] == "sigmoid" else DCTNNRegressor
    params = dict(structure=cfg["structure"], ranks=cfg["ranks"], cp_rank=cfg["cp_rank"],
                  refinement_shape=cfg["refinement_shape"], depth=cfg["depth"],
                  hidden_core=cfg["widths"], hidden_ref=cfg["ref_widths"],
                  layer_norm=cfg["layer_norm"], truncation=cfg["truncation"], lam=cfg["lambda"],
                  tau=cfg["tau"], lr=cfg["lr"], weight_decay=cfg["weight_decay"],
                  batch_size=cfg["batch_size"], epochs=cfg["epochs"],
                  hooi_iters=cfg["hooi_iters"], als_iters=cfg["als_iters"],
                  decomp_tol=cfg["decomp_tol"], random_state=cfg["seed"])
    Xtr, ytr = ds.subset("train")
    try:
        model = klass(**params).fit(Xtr, ytr)
    except ValueError as e:
        if isinstance(e, RankDeficientError):
            raise
        raise ConfigError(str(e)) from e
    out = cfg["out"]
    model.save(out)
    write_json(os.path.join(out, "dataset.json"),
               {"path": os.path.abspath(cfg["data"]), "id": dataset_id(cfg["data"])})
    if klass is DCTNNClassifier:
        metrics = fit_metrics(model, ds)
    else:
        metrics = {}
        for name, idx in ds.splits.items():
            metrics[f"{name}_mse"] = float(np.mean((model.predict(ds.X[idx]) - ds.y[idx]) ** 2))
    metrics["selected_support_size"] = int(model.selected_support().size)
    write_json(os.path.join(out, "metrics.json"), metrics)
    train_idx = ds.splits["train"]
    write_csv(os.path.join(out, "residuals.csv"), ["index", "y", "fitted", "residual"],
              zip(train_idx, ytr, model.train_output_, model.residuals_))
    return write_manifest(out, "fit", cfg, cfg["seed"], started,
                          {"data": dataset_id(cfg["data"])})


def _model_dataset(model_dir, data_dir, origin):
    data_dir = data_dir or origin["path"]
    if dataset_id(data_dir) != origin["id"]:
        raise DataError(f"model {model_dir} was not fitted on {data_dir}")
    return data_dir, load_dataset(data_dir)


def _band_rows(band):
    return band.table().tolist()


def cmd_uq(cfg, started):
    _require(cfg, "model", "out")
    model, origin = load_model(cfg["model"])
    data_dir, ds = _model_dataset(cfg["model"], cfg["data"], origin)
    latents = split_latents(model, ds)
    smoothed = latents["calibration"].prob.copy() if cfg["smoother"] == "model" else None
    try:
        conf, band, (sens, spec) = uq(latents, cfg["k_train"], cfg["k_cal"], cfg["omega"],
                                      cfg["alpha"], cfg["n_grid"], smoothed, cfg["inflated"])
    except InsufficientCalibrationError as e:
        raise DataError(str(e)) from e
    except ValueError as e:
        raise ConfigError(str(e)) from e
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    write_csv(os.path.join(out, "band.csv"), band.COLUMNS, _band_rows(band))
    lower, upper = conf.intervals(latents["test"])
    rows = np.arange(len(latents["test"]))
    y = latents["test"].label
    write_csv(os.path.join(out, "intervals.csv"), ["index", "y", "prob", "lower", "upper"],
              zip(ds.splits["test"], y, latents["test"].prob, lower[rows, y], upper[rows, y]))
    write_json(os.path.join(out, "auc.json"), {"alpha": cfg["alpha"], "sens": sens.to_dict(),
                                               "spec": spec.to_dict()})
    return write_manifest(out, "uq", cfg, None, started,
                          {"model": tree_hashes(cfg["model"]), "data": origin["id"]})


def cmd_select(cfg, started):
    _require(cfg, "model_a", "model_b", "out")
    model_a, origin_a = load_model(cfg["model_a"])
    model_b, origin_b = load_model(cfg["model_b"])
    if origin_a["id"] != origin_b["id"]:
        raise DataError("the two checkpoints were fitted on different datasets")
    _, ds = _model_dataset(cfg["model_a"], cfg["data"], origin_a)
    lat_a, lat_b = split_latents(model_a, ds), split_latents(model_b, ds)
    try:
        res = selection(model_a, model_b, lat_a, lat_b, cfg["k"], cfg["omega"], cfg["alpha"],
                        cfg["n_grid"])
    except ValueError as e:
        raise DataError(str(e)) from e
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    names = (model_a.structure, model_b.structure)
    if names[0] == names[1]:
        names = ("A", "B")
    header = ["d" + c for c in res.forward.band.COLUMNS]
    for d in (res.forward, res.reverse):
        tag = "forward" if d is res.forward else "reverse"
        write_csv(os.path.join(out, f"diff_band_{tag}.csv"), header, _band_rows(d.band))
        write_csv(os.path.join(out, f"contingency_{tag}.csv"), ["dlambda", "n11", "n12", "n21", "n22"],
                  [[t, *c] for t, c in zip(d.band.thresholds.tolist(), d.counts.tolist())])
    write_json(os.path.join(out, "decision.json"), res.to_dict(names))
    return write_manifest(out, "select", cfg, None, started,
                          {"model_a": tree_hashes(cfg["model_a"]),
                           "model_b": tree_hashes(cfg["model_b"]), "data": origin_a["id"]})


def cmd_coverage(cfg, started):
    _require(cfg, "out")
    overrides = {}
    if cfg["data"]:
        ds = load_dataset(cfg["data"])
        if not ds.has_oracle or ds.config is None:
            raise DataError("coverage needs a simulated dataset with oracle probabilities")
        overrides = {k: v for k, v in ds.config.to_dict().items() if k not in ("n", "seed")}
        cfg = {**cfg, "regime": overrides.pop("regime")}
    fit_params = {} if cfg["epochs"] is None else {"epochs": cfg["epochs"]}
    try:
        report = coverage_experiment(cfg["reps"], cfg["alpha"], cfg["regime"], cfg["structure"],
                                     cfg["n"], cfg["seed"], cfg["nested_alphas"],
                                     cfg["oracle_fed"], overrides, **fit_params)
    except InsufficientCalibrationError as e:
        raise DataError(str(e)) from e
    result = report.to_dict()
    if cfg["selector_reps"] > 0:
        runs = paired_experiment(cfg["regime"], range(cfg["seed"], cfg["seed"] + cfg["selector_reps"]),
                                 sim_overrides=overrides, alpha=cfg["alpha"])
        wrong = "cp" if cfg["regime"] == "tucker" else "tucker"
        rate = float(np.mean([r.decision == wrong for r in runs]))
        result["selector"] = {"wrong_selection_rate": rate, "bound": 2 * cfg["alpha"],
                              "runs": [r.to_dict() for r in runs]}
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    write_json(os.path.join(out, "coverage.json"), result)
    return write_manifest(out, "coverage", cfg, cfg["seed"], started)


def cmd_inspect(path):
    directory = path if os.path.isdir(path) else os.path.dirname(path)
    manifest = read_manifest(directory)
    print(json.dumps(manifest, indent=2, sort_keys=True))
    for name in ("metrics.json", "summary.json", "auc.json", "decision.json"):
        p = os.path.join(directory, name)
        if os.path.exists(p):
            with open(p) as f:
                print(f"--- {name}")
                print(f.read().rstrip())
    return manifest


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "uq": cmd_uq, "select": cmd_select,
            "coverage": cmd_coverage}


# -- entry point --------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="dctnn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dctnn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in OPTIONS.items():
        p = sub.add_parser(name, help=COMMANDS[name].__name__.replace("cmd_", ""))
        p.add_argument("--config", help="INI file; options are read from section [%s]" % name)
        p.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")
        for o in opts:
            p.add_argument(o.flag, dest=o.key, type=_flag_parser(o), default=None,
                           help=o.help or None)
    p = sub.add_parser("inspect", help="print a run's manifest and metrics")
    p.add_argument("path")
    return parser


def _flag_parser(opt):
    def parse(text):
        try:
            return _parse(opt, text)
        except ConfigError as e:
            raise argparse.ArgumentTypeError(str(e)) from e
    parse.__name__ = opt.key
    return parse


def run(argv=None):
    """Run one subcommand; returns the manifest (raises on failure)."""
    args = build_parser().parse_args(argv)
    if args.command == "inspect":
        return cmd_inspect(args.path)
    cfg = resolve(args.command, args)
    started = time.perf_counter()
    if args.threads:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=args.threads):
            return COMMANDS[args.command](cfg, started)
    return COMMANDS[args.command](cfg, started)


def main(argv=None):
    try:
        run(argv)
    except ConfigError as e:
        print(f"dctnn: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as e:
        print(f"dctnn: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, RankDeficientError, np.linalg.LinAlgError) as e:
        print(f"dctnn: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

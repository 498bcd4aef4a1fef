"""Command-line front end: ``mhlr gen|train|eval|sweep|defaults``.

Every setting is a flat dotted key (``hyper.gamma_K``, ``data.train``...).
Values come from the built-in defaults, then an optional JSON ``--config``
file, then ``--key value`` overrides on the command line (values are parsed
as JSON when possible, e.g. ``--sweep.seeds [0,1,2]``).

Exit codes: 0 success, 1 runtime or data error, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from typing import Any

from . import dataset as ds_mod
from .dataset import DatasetError, generate_planar_embedding, generate_two_moons_multiview
from .evaluation import DEFAULT_FRACTIONS, EvaluationError, evaluate, fraction_sweep, write_reports_csv
from .kernels import KernelError, KernelSpec
from .manifold import ManifoldError
from .model import (
    MethodSpec,
    ModelError,
    MulticlassModel,
    load_model,
    method_family,
    save_model,
    train_one_vs_rest,
)
from .optimize import Hyperparams, OptimizationError

logger = logging.getLogger("mhlr")

# key -> (default, description)
FIELDS: dict[str, tuple[Any, str]] = {
    "seed": (0, "seed for generators and label masking"),
    "out": (None, "output path (directory for gen, model file for train, CSV for eval/sweep)"),
    "log": (None, "training log path; default <out>.log.json"),
    "data.train": (None, "training dataset manifest"),
    "data.test": (None, "test dataset manifest (eval, sweep)"),
    "gen.kind": ("two-moons", "generator: two-moons or planar"),
    "gen.n": (200, "number of generated examples"),
    "gen.noise": (0.1, "two-moons noise standard deviation"),
    "gen.ambient_dim": (5, "planar embedding ambient dimension"),
    "gen.test_n": (0, "if > 0, also write a test set of this size (seed + 1)"),
    "train.fraction": (None, "if set, re-mask the training set to this labeled fraction"),
    "eval.model": (None, "model file to evaluate"),
    "method.name": ("mHLR", "method preset: VisF LapVF HesVF TagF LapTag HesTag mCLR mLLR mHLR"),
    "method.regularizer": (None, "override the preset regularizer: none, laplacian, hessian"),
    "method.view_mode": (None, "override the preset view mode: multiview, concatenated, single"),
    "method.view_index": (None, "override the preset view index for single mode"),
    "kernel.kind": ("rbf", "kernel for every view: rbf or linear"),
    "kernel.bandwidth": (None, "rbf bandwidth; null = median pairwise distance per view"),
    "manifold.k_hessian": (15, "neighbours per Hessian neighbourhood"),
    "manifold.k_laplacian": (10, "neighbours in the Laplacian kNN graph"),
    "manifold.intrinsic_dim": (2, "tangent dimension of the Hessian estimator"),
    "manifold.laplacian_weighting": ("heat", "Laplacian edge weights: heat or binary"),
    "hyper.gamma_K": (1e-3, "RKHS norm weight"),
    "hyper.gamma_I": (1e-4, "manifold term weight"),
    "hyper.gamma_theta": (0.1, "kernel-weight penalty"),
    "hyper.gamma_beta": (0.1, "regularizer-weight penalty"),
    "hyper.cg_tol": (1e-7, "inner solver tolerance on objective change"),
    "hyper.cg_max_iter": (500, "inner solver iteration cap"),
    "hyper.outer_tol": (1e-5, "relative objective change ending the alternation"),
    "hyper.outer_max_iter": (100, "alternation iteration cap"),
    "sweep.methods": (["mCLR", "mLLR", "mHLR"], "methods compared by sweep"),
    "sweep.fractions": (list(DEFAULT_FRACTIONS), "labeled fractions for sweep"),
    "sweep.seeds": ([0, 1, 2], "seeds for sweep"),
}

_INT_KEYS = {k for k, (v, _) in FIELDS.items() if isinstance(v, int) and not isinstance(v, bool)}
_INT_KEYS |= {"method.view_index"}
_FLOAT_KEYS = {k for k, (v, _) in FIELDS.items() if isinstance(v, float)}
_FLOAT_KEYS |= {"kernel.bandwidth", "train.fraction"}
_STR_KEYS = {"out", "log", "data.train", "data.test", "gen.kind", "eval.model", "method.name",
             "method.regularizer", "method.view_mode", "kernel.kind", "manifold.laplacian_weighting"}


class ConfigError(ValueError):
    pass


def default_config() -> dict[str, Any]:
    return {k: (list(v) if isinstance(v, list) else v) for k, (v, _) in FIELDS.items()}


def _coerce(key: str, value: Any) -> Any:
    if value is None:
        return None
    try:
        if key in _INT_KEYS:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if key in _FLOAT_KEYS:
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if key in _STR_KEYS:
            if not isinstance(value, str):
                raise ValueError
            return value
        if key == "sweep.methods":
            if not isinstance(value, list) or not all(isinstance(m, str) for m in value):
                raise ValueError
            return list(value)
        if key == "sweep.fractions":
            return [float(v) for v in value]
        if key == "sweep.seeds":
            return [int(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return value


def merge_config(base: dict, updates: dict, source: str) -> dict:
    out = dict(base)
    for key, value in updates.items():
        if key not in FIELDS:
            raise ConfigError(f"unknown config key {key!r} in {source}")
        out[key] = _coerce(key, value)
    return out


def load_config_file(path: str) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return data


def parse_overrides(tokens: list[str]) -> dict:
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"missing value for --{key}")
            raw = tokens[i + 1]
            i += 2
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out[key.replace("-", "_") if key not in FIELDS else key] = value
    return out


def build_config(args: argparse.Namespace, extra: list[str]) -> dict:
    cfg = default_config()
    if args.config:
        cfg = merge_config(cfg, load_config_file(args.config), args.config)
    flags = {}
    for key, attr in (("seed", "seed"), ("out", "out"), ("data.train", "train"),
                      ("data.test", "test"), ("eval.model", "model")):
        value = getattr(args, attr, None)
        if value is not None:
            flags[key] = value
    cfg = merge_config(cfg, parse_overrides(extra), "command line")
    return merge_config(cfg, flags, "command line")


# ---------------------------------------------------------------------------
# config -> objects
# ---------------------------------------------------------------------------


def hyper_from_config(cfg: dict) -> Hyperparams:
    try:
        return Hyperparams(**{k.split(".", 1)[1]: cfg[k] for k in FIELDS if k.startswith("hyper.")})
    except OptimizationError as exc:
        raise ConfigError(str(exc)) from None


def methods_from_config(cfg: dict, names: list[str]) -> dict[str, MethodSpec]:
    try:
        kernel = KernelSpec(cfg["kernel.kind"], cfg["kernel.bandwidth"])
        family = method_family(
            kernels=(kernel,),
            hyper=hyper_from_config(cfg),
            k_hessian=cfg["manifold.k_hessian"],
            k_laplacian=cfg["manifold.k_laplacian"],
            intrinsic_dim=cfg["manifold.intrinsic_dim"],
            laplacian_weighting=cfg["manifold.laplacian_weighting"],
        )
    except (KernelError, ModelError) as exc:
        raise ConfigError(str(exc)) from None
    out = {}
    for name in names:
        if name not in family:
            raise ConfigError(f"unknown method {name!r}; choose from {sorted(family)}")
        out[name] = family[name]
    return out


def method_from_config(cfg: dict) -> MethodSpec:
    spec = methods_from_config(cfg, [cfg["method.name"]])[cfg["method.name"]]
    overrides = {}
    for key, attr in (("method.regularizer", "regularizer"), ("method.view_mode", "view_mode"),
                      ("method.view_index", "view_index")):
        if cfg[key] is not None:
            overrides[attr] = cfg[key]
    if overrides:
        try:
            spec = replace(spec, **overrides)
        except ModelError as exc:
            raise ConfigError(str(exc)) from None
    return spec


def _require(cfg: dict, key: str) -> Any:
    if cfg.get(key) in (None, ""):
        raise ConfigError(f"missing required setting {key!r}")
    return cfg[key]


def _write_json(path: str, obj: Any) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen(cfg: dict) -> int:
    out = _require(cfg, "out")
    kind, seed = cfg["gen.kind"], cfg["seed"]

    def make(n, s):
        if kind == "two-moons":
            return generate_two_moons_multiview(n, cfg["gen.noise"], s)
        if kind == "planar":
            return generate_planar_embedding(n, cfg["gen.ambient_dim"], s)
        raise ConfigError(f"unknown generator {kind!r}; choose two-moons or planar")

    try:
        train = make(cfg["gen.n"], seed)
        test = make(cfg["gen.test_n"], seed + 1) if cfg["gen.test_n"] > 0 else None
    except DatasetError as exc:
        raise ConfigError(str(exc)) from None
    path = ds_mod.save_dataset(train, out)
    print(path)
    if test is not None:
        print(ds_mod.save_dataset(test, out, prefix="test_"))
    return 0


def cmd_train(cfg: dict) -> int:
    out = _require(cfg, "out")
    method = method_from_config(cfg)
    data = ds_mod.load_dataset(_require(cfg, "data.train"))
    if cfg["train.fraction"] is not None:
        data = ds_mod.mask_labeled_fraction(data, cfg["train.fraction"], cfg["seed"])
    model = train_one_vs_rest(data, method)
    save_model(model, out)
    log = {
        "config": cfg,
        "method": method.label,
        "classes": [
            {
                "class": b.positive_class,
                "objective_trace": b.objective_trace,
                "theta": b.theta.tolist(),
                "beta": b.beta.tolist(),
                "converged": b.converged,
            }
            for b in model.binaries
        ],
    }
    _write_json(cfg["log"] or out + ".log.json", log)
    logger.info("wrote %s", out)
    return 0


def cmd_eval(cfg: dict) -> int:
    out = _require(cfg, "out")
    model = load_model(_require(cfg, "eval.model"))
    if not isinstance(model, MulticlassModel):
        model = MulticlassModel([model.positive_class], [model])
    data = ds_mod.load_dataset(_require(cfg, "data.test"))
    report = evaluate(model, data, seed=cfg["seed"])
    write_reports_csv([report], out)
    return 0


def cmd_sweep(cfg: dict) -> int:
    out = _require(cfg, "out")
    methods = methods_from_config(cfg, cfg["sweep.methods"])
    fractions = cfg["sweep.fractions"]
    if not fractions or any(not 0 < f <= 1 for f in fractions):
        raise ConfigError(f"sweep.fractions must be nonempty and in (0, 1]: {fractions}")
    if not cfg["sweep.seeds"]:
        raise ConfigError("sweep.seeds must be nonempty")
    train = ds_mod.load_dataset(_require(cfg, "data.train"))
    test = ds_mod.load_dataset(_require(cfg, "data.test"))
    reports = fraction_sweep(train, test, methods, fractions, cfg["sweep.seeds"])
    write_reports_csv(reports, out)
    return 0


def cmd_defaults(cfg: dict) -> int:
    width = max(map(len, FIELDS))
    for key, (default, doc) in FIELDS.items():
        print(f"{key:<{width}}  {json.dumps(default):<24} {doc}")
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep,
            "defaults": cmd_defaults}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mhlr", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file with flat dotted keys")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        if name in ("train", "sweep"):
            p.add_argument("--train", help="training manifest (data.train)")
        if name in ("eval", "sweep"):
            p.add_argument("--test", "--data", dest="test", help="test manifest (data.test)")
        if name == "eval":
            p.add_argument("--model", help="model file (eval.model)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = build_config(args, extra)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, DatasetError, ModelError, ManifoldError, KernelError,
            OptimizationError, EvaluationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

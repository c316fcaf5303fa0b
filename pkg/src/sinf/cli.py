"""Command-line front end: ``sinf train|sample|logp|ood|swd``.

Training options can come from a plain-text config file with one
``key = value`` per line (``#`` starts a comment). Keys mirror
:class:`TrainConfig`; nested settings use prefixes::

    K = 2
    max_layers = 100
    alpha = 0.9, 0.9
    kde_b = 1.0
    ls_initial_step = 0.5
    patch_schedule = default        # or q:mode:K:iters;...
    image_shape = 28, 28, 1

Command-line flags override the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, SinfError
from .flow import LogitTransform
from .io import load_dataset, load_model, save_model, write_csv, write_tensor
from .metrics import ood_report
from .patching import default_schedule, format_schedule, parse_schedule
from .sliced import max_k_swd_multistart, match_sample_sizes, sliced_wasserstein
from .training import TrainConfig, small_data_presets, train_gis, train_sig

__all__ = ["main", "build_parser", "parse_config", "load_train_config"]


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports errors as a single line."""

    def error(self, message):
        raise CliError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- config


def _tuple(cast):
    return lambda v: tuple(cast(x) for x in v.replace(",", " ").split())


def _bool(v):
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _optional(cast):
    return lambda v: None if v.strip().lower() in ("none", "auto", "") else cast(v)


_TOP = {
    "K": int,
    "max_layers": int,
    "stiefel_max_iter": _optional(int),
    "stiefel_tol": float,
    "alpha": _tuple(float),
    "knots": _optional(int),
    "image_shape": _optional(_tuple(int)),
    "validation_fraction": float,
    "patience": int,
    "seed": int,
    "random_axes": _bool,
    "cdf_grid": int,
    "patch_schedule": str,
}
_KDE = {"kde_b": ("b", float), "kde_width": ("width", _optional(float))}
_LS = {
    "ls_initial_step": ("initial_step", float),
    "ls_shrink_factor": ("shrink_factor", float),
    "ls_sufficient_increase": ("sufficient_increase", float),
    "ls_max_backtracks": ("max_backtracks", int),
}


def parse_config(text):
    """Parse ``key = value`` lines into a dict of typed values."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        cast = _TOP.get(key) or (_KDE.get(key) or _LS.get(key) or (None, None))[1]
        if cast is None:
            raise CliError(f"config line {lineno}: unknown key {key!r}")
        try:
            out[key] = cast(value)
        except ValueError as exc:
            raise CliError(f"config line {lineno}: bad value for {key}: {exc}") from None
    return out


def load_train_config(values, base=None):
    """Turn a parsed config dict into a :class:`TrainConfig`."""
    cfg = base or TrainConfig()
    top = {k: v for k, v in values.items() if k in _TOP and k != "patch_schedule"}
    kde = {_KDE[k][0]: v for k, v in values.items() if k in _KDE}
    ls = {_LS[k][0]: v for k, v in values.items() if k in _LS}
    if kde:
        top["kde"] = replace(cfg.kde, **kde)
    if ls:
        top["line_search"] = replace(cfg.line_search, **ls)
    cfg = replace(cfg, **top)
    sched = values.get("patch_schedule")
    if sched and sched.lower() != "none":
        if cfg.image_shape is None:
            raise CliError("patch_schedule needs image_shape")
        if sched.lower() == "default":
            S, _, c = cfg.image_shape
            schedule = default_schedule(S, c, max(1, cfg.max_layers))
        else:
            schedule = parse_schedule(sched)
        cfg = replace(cfg, patch_schedule=schedule)
    return cfg


def _report_dict(report, cfg, mode):
    d = asdict(report)
    d["mode"] = mode
    d["config"] = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    d["config"]["kde"] = asdict(cfg.kde)
    d["config"]["line_search"] = asdict(cfg.line_search)
    if cfg.patch_schedule is not None:
        d["config"]["patch_schedule"] = format_schedule(cfg.patch_schedule)
    return d


# ---------------------------------------------------------------- commands


def _write_matrix(path, X):
    if path is None or path == "-":
        np.savetxt(sys.stdout, X, delimiter=",", fmt="%.17g")
    elif str(path).endswith(".csv"):
        write_csv(path, X)
    else:
        write_tensor(path, X)


def _emit_json(path, obj):
    text = json.dumps(obj, indent=2, default=float)
    if path is None or path == "-":
        print(text)
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")


def cmd_train(args):
    lam = args.logit
    data = load_dataset(args.data, args.format, LogitTransform(lam) if lam is not None else None)
    X = data.features
    n, d = X.shape
    if args.preset:
        if args.mode != "gis":
            raise CliError("--preset applies to gis training only")
        n_train = int(round(n / (1 + 0.3)))
        cfg = small_data_presets(n_train, d, args.preset)
    else:
        cfg = TrainConfig()
    if args.config:
        cfg = load_train_config(parse_config(Path(args.config).read_text(encoding="utf-8")), cfg)
    overrides = {}
    if args.k is not None:
        overrides["K"] = args.k
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.layers is not None:
        overrides["max_layers"] = args.layers
    cfg = replace(cfg, **overrides)

    train = train_sig if args.mode == "sig" else train_gis
    flow, report = train(X, cfg)
    flow.preprocess = data.preprocess
    save_model(flow, args.out)
    report_path = args.report or f"{args.out}.report.json"
    _emit_json(report_path, _report_dict(report, cfg, args.mode))
    print(f"trained {args.mode} flow with {len(flow)} layers in {report.wall_time:.2f}s -> {args.out}")
    return 0


def cmd_sample(args):
    flow = load_model(args.model)
    X = flow.sample(args.n, temperature=args.temperature, seed=args.seed)
    _write_matrix(args.out, X)
    return 0


def _load_for(flow, path, fmt):
    X = load_dataset(path, fmt).values
    if X.shape[1] != flow.d:
        raise DimensionMismatchError(f"{path}: {X.shape[1]} columns, model expects {flow.d}")
    return X


def cmd_logp(args):
    flow = load_model(args.model)
    logp = flow.log_density(_load_for(flow, args.data, args.format)).logp
    _write_matrix(args.out, logp[:, None])
    return 0


def cmd_ood(args):
    flow = load_model(args.model)
    X_in = _load_for(flow, args.in_data, args.format)
    X_out = _load_for(flow, args.ood_data, args.format)
    rep = ood_report(flow, X_in, X_out)
    _emit_json(args.out, rep.to_dict())
    return 0


def cmd_swd(args):
    X = load_dataset(args.x, args.format).values
    Y = load_dataset(args.y, args.format).values
    if X.shape[1] != Y.shape[1]:
        raise DimensionMismatchError(f"datasets have {X.shape[1]} and {Y.shape[1]} columns")
    if args.k > X.shape[1]:
        raise CliError(f"--k {args.k} exceeds the data dimension {X.shape[1]}")
    X, Y = match_sample_sizes(X, Y, seed=args.seed)
    res = max_k_swd_multistart(X, Y, K=args.k, p=args.p, restarts=args.restarts, max_iter=args.max_iter, seed=args.seed)
    swd = sliced_wasserstein(X, Y, n_projections=args.projections, p=args.p, seed=args.seed)
    _emit_json(
        args.out,
        {
            "max_k_swd": res.distance,
            "K": args.k,
            "basis": res.basis.tolist(),
            "converged": res.converged,
            "sliced_wasserstein": swd,
            "projections": args.projections,
            "p": args.p,
            "n_samples": len(X),
        },
    )
    return 0


# ---------------------------------------------------------------- parser


def _positive_int(v):
    n = int(v)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {v}")
    return n


def _positive_float(v):
    x = float(v)
    if not x > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {v}")
    return x


def build_parser():
    p = _Parser(prog="sinf", description="Sliced iterative normalizing flows.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-layer progress")
    sub = p.add_subparsers(dest="command", required=True)
    fmt = dict(choices=("csv", "binary"), default=None, help="input format (default: detect)")

    t = sub.add_parser("train", help="fit a flow to data")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="model file to write")
    t.add_argument("--mode", choices=("sig", "gis"), default="gis")
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--k", type=_positive_int)
    t.add_argument("--seed", type=int)
    t.add_argument("--layers", type=int, help="maximum number of iterations")
    t.add_argument("--preset", choices=("low", "high"), help="small-data GIS preset")
    t.add_argument("--logit", type=float, nargs="?", const=1e-6, default=None, metavar="LAMBDA",
                   help="logit preprocessing for data in [0, 1] (default squeeze 1e-6)")
    t.add_argument("--report", help="training log (default: <out>.report.json)")
    t.add_argument("--format", **fmt)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw samples from a model")
    s.add_argument("--model", required=True)
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--temperature", type=_positive_float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help=".csv for CSV, anything else for a tensor file (default: CSV on stdout)")
    s.set_defaults(func=cmd_sample)

    lp = sub.add_parser("logp", help="per-row log-densities")
    lp.add_argument("--model", required=True)
    lp.add_argument("--data", required=True)
    lp.add_argument("--out", help="CSV file (default: stdout)")
    lp.add_argument("--format", **fmt)
    lp.set_defaults(func=cmd_logp)

    o = sub.add_parser("ood", help="AUROC of in- vs out-of-distribution log-densities")
    o.add_argument("--model", required=True)
    o.add_argument("--in-data", required=True)
    o.add_argument("--ood-data", required=True)
    o.add_argument("--out", help="JSON report (default: stdout)")
    o.add_argument("--format", **fmt)
    o.set_defaults(func=cmd_ood)

    w = sub.add_parser("swd", help="sliced distances between two datasets")
    w.add_argument("--x", required=True)
    w.add_argument("--y", required=True)
    w.add_argument("--k", type=_positive_int, default=1)
    w.add_argument("--projections", type=_positive_int, default=100)
    w.add_argument("--restarts", type=_positive_int, default=10)
    w.add_argument("--max-iter", type=_positive_int, default=200)
    w.add_argument("--p", type=float, default=2.0)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--out", help="JSON report (default: stdout)")
    w.add_argument("--format", **fmt)
    w.set_defaults(func=cmd_swd)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (SinfError, CliError, OSError, ValueError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"sinf {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

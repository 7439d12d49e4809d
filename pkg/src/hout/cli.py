"""Command-line entry point.

Every subcommand takes its settings from an optional ``--config`` JSON object
and from flags; flags win.  Unknown config keys are rejected.  Failures print
one JSON object ``{"error", "operation", "message"}`` to stderr: exit 2 for
usage and configuration errors, exit 1 for numerical or I/O failures.
"""

import argparse
import json
import sys
from math import sqrt

import numpy as np

from . import experiments as ex
from .decomp import (BOUNDS, EIG_TOL, MAX_ITERS, approx_rank1_decompose,
                     verify_entry_bound)
from .errors import HoutError
from .serialize import (dumps, ensemble_json, read_ensemble_csv, read_json,
                        write_ensemble_csv, write_json, write_table)
from .sigma import MomentSet, hout_condition, hout_ensemble, propagate, sut, sut_condition
from .tensor import from_json as tensor_from_json
from .tensor import random_symmetric

ENSEMBLE_HELP = "Ensemble CSV columns: index, weight, x_1, ..., x_d (row 0 is the centre node)."
POLY_HELP = "Poly-study CSV columns: " + ", ".join(ex.POLY_COLUMNS) + "."
SKILL_HELP = "Lorenz-study CSV columns: " + ", ".join(ex.SKILL_COLUMNS) + "."
BOUNDS_COLUMNS = ("index", "order", "dim", "lambda_maxabs", "max_entry", "ratio", "c_k", "ok")
BOUNDS_HELP = "Verify-bounds CSV columns: " + ", ".join(BOUNDS_COLUMNS) + "."
DECAY_COLUMNS = ("order", "dim", "tensor", "term", "residual_before", "residual_after",
                 "ratio", "rate_bound")


class UsageError(Exception):
    pass


def _gamma(text):
    return None if text in ("default", "none", "null") else float(text)


# key: (flag type, default, help); REQUIRED marks keys without a default
REQUIRED = object()
LORENZ_DEFAULTS = ex.LorenzSpec()
COMMANDS = {
    "decompose": ("Greedy rank-1 decomposition of a symmetric tensor JSON {order, dim, entries}.", {
        "input": (str, REQUIRED, "tensor JSON"),
        "out": (str, REQUIRED, "decomposition JSON"),
        "tau": (float, REQUIRED, "Frobenius tolerance"),
        "eig_tol": (float, EIG_TOL, "eigenvalue change tolerance"),
        "max_iters": (int, MAX_ITERS, "power iterations per eigenpair"),
        "max_terms": (int, None, "term budget (default 10 d^k)"),
        "seed": (int, 0, "seed for restarts"),
        "residuals_out": (str, None, "optional CSV: iteration, norm, ratio"),
    }),
    "sut": ("Scaled unscented transform sigma points. " + ENSEMBLE_HELP, {
        "moments": (str, REQUIRED, "moment JSON {mu, C, S, K}"),
        "out": (str, REQUIRED, "ensemble CSV"),
        "beta": (float, sqrt(3.0), "spread"),
        "json_out": (str, None, "optional JSON mirror"),
    }),
    "hout": ("Four-moment sigma points. " + ENSEMBLE_HELP, {
        "moments": (str, REQUIRED, "moment JSON {mu, C, S, K}"),
        "out": (str, REQUIRED, "ensemble CSV"),
        "tau": (float, REQUIRED, "skewness/kurtosis tolerance"),
        "gamma": (_gamma, None, "skew spread (default J^(-1/3))"),
        "halve_delta": (bool, False, "shrink delta while C_hat stays positive definite"),
        "eig_tol": (float, EIG_TOL, "eigenvalue change tolerance"),
        "max_iters": (int, MAX_ITERS, "power iterations per eigenpair"),
        "max_terms": (int, None, "term budget per tensor"),
        "seed": (int, 0, "seed for restarts"),
        "json_out": (str, None, "optional JSON mirror with parameters"),
    }),
    "propagate": ("Push an ensemble through a function and report weighted output moments.", {
        "ensemble": (str, REQUIRED, "ensemble CSV"),
        "out": (str, REQUIRED, "output moment JSON"),
        "function": (str, "identity", "identity | poly | lorenz"),
        "a": (float, None, "poly: linear coefficients"),
        "b": (float, None, "poly: power coefficients"),
        "c": (float, 1.0, "poly: nonlinearity strength"),
        "n": (int, 2, "poly: power"),
        "steps": (int, 1, "lorenz: RK4 steps"),
        "dt": (float, 0.1, "lorenz: step size"),
        "outputs": (str, None, "optional CSV of per-node outputs"),
    }),
    "poly-study": ("Polynomial propagation study on the heavy-tailed input. " + POLY_HELP, {
        "out": (str, REQUIRED, "results CSV"),
        "summary": (str, None, "optional JSON summary"),
        "d": (int, 2, "input dimension"),
        "ensemble_size": (int, 20000, "Monte Carlo sample size"),
        "seed": (int, 0, "seed for A, B, Z and coefficients"),
        "A": (float, None, "d*d row-major (default random)"),
        "B": (float, None, "d*d row-major (default random)"),
        "powers": (int, [2, 3, 4, 5], "polynomial powers n"),
        "c_values": (float, list(ex.PolySpec.c_values), "nonlinearity sweep"),
        "tau": (float, 1e-5, "HOUT tolerance"),
        "betas": (float, [0.5, 1.0, sqrt(3.0), 2.0], "SUT spreads"),
        "gammas": (_gamma, [None, 0.5, 1.0, 2.0], "HOUT skew spreads ('default' allowed)"),
    }),
    "lorenz-study": ("Lorenz-63 forecast skill, HOUT and SUT against a large ensemble. "
                     + SKILL_HELP, {
        "out": (str, REQUIRED, "per-step CSV"),
        "summary": (str, None, "optional JSON summary"),
        "threads": (int, None, "trial parallelism (default $HOUT_THREADS or 1)"),
        **{f: (type(getattr(LORENZ_DEFAULTS, f)), getattr(LORENZ_DEFAULTS, f), f.replace("_", " "))
           for f in ex.LorenzSpec.__dataclass_fields__},
    }),
    "verify-bounds": ("Check lambda_maxabs >= c_k max|entry| on random tensors (d <= 3). "
                      + BOUNDS_HELP, {
        "out": (str, REQUIRED, "per-tensor CSV"),
        "orders": (int, [3, 4], "tensor orders"),
        "count": (int, 200, "tensors per order"),
        "dim": (int, 2, "dimension (1..3)"),
        "grid_resolution": (int, 720, "sphere grid points per angle"),
        "seed": (int, 0, "seed"),
        "decay_out": (str, None, "optional CSV of rank-1 decay curves on the same tensors"),
    }),
}
LIST_KEYS = {"a", "b", "A", "B", "powers", "c_values", "betas", "gammas", "orders"}


def build_parser():
    parser = argparse.ArgumentParser(prog="hout", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (desc, keys) in COMMANDS.items():
        p = sub.add_parser(name, help=desc.split(".")[0], description=desc)
        p.add_argument("--config", help="JSON object of settings; flags override it")
        for key, (typ, default, help_) in keys.items():
            flag = "--" + key.replace("_", "-")
            shown = "required" if default is REQUIRED else f"default {default}"
            if typ is bool:
                p.add_argument(flag, dest=key, default=None, action=argparse.BooleanOptionalAction,
                               help=f"{help_} ({shown})")
            else:
                p.add_argument(flag, dest=key, type=typ, default=None,
                               nargs="+" if key in LIST_KEYS else None,
                               help=f"{help_} ({shown})")
    return parser


def resolve(args):
    """Defaults, then config file values, then explicit flags."""
    _, keys = COMMANDS[args.command]
    cfg = {k: d for k, (_, d, _) in keys.items()}
    if args.config:
        try:
            loaded = read_json(args.config)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config must be a JSON object")
        unknown = sorted(set(loaded) - set(keys))
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {unknown}")
        cfg.update(loaded)
    for key in keys:
        value = getattr(args, key)
        if value is not None:
            cfg[key] = value
    missing = [k for k, v in cfg.items() if v is REQUIRED]
    if missing:
        raise UsageError(f"missing required settings: {missing}")
    if "tau" in cfg and not cfg["tau"] > 0:
        raise UsageError("tau must be positive")
    return cfg


def _rng(cfg):
    return np.random.default_rng(cfg.get("seed", 0))


def cmd_decompose(cfg):
    T = tensor_from_json(read_json(cfg["input"]))
    dec = approx_rank1_decompose(T, cfg["tau"], cfg["eig_tol"], cfg["max_iters"],
                                 cfg["max_terms"], _rng(cfg))
    write_json(cfg["out"], dec.to_json())
    if cfg["residuals_out"]:
        r = dec.residual_norms
        rows = [{"iteration": i, "norm": x, "ratio": x / r[i - 1] if i else 1.0}
                for i, x in enumerate(r)]
        write_table(cfg["residuals_out"], rows, ("iteration", "norm", "ratio"))
    return {"terms": len(dec), "residual": dec.residual_norms[-1]}


def _moments(path):
    return MomentSet.from_json(read_json(path))


def cmd_sut(cfg):
    m = _moments(cfg["moments"])
    ens = sut(m.mean, m.cov, cfg["beta"])
    write_ensemble_csv(cfg["out"], ens)
    if cfg["json_out"]:
        write_json(cfg["json_out"], ensemble_json(ens))
    return {"nodes": len(ens), "condition": sut_condition(cfg["beta"], m.dim)}


def cmd_hout(cfg):
    m = _moments(cfg["moments"])
    ens, p = hout_ensemble(m, cfg["tau"], cfg["gamma"], halve_delta=bool(cfg["halve_delta"]),
                           eig_tol=cfg["eig_tol"], max_iters=cfg["max_iters"],
                           max_terms=cfg["max_terms"], rng=_rng(cfg))
    write_ensemble_csv(cfg["out"], ens)
    if cfg["json_out"]:
        write_json(cfg["json_out"], ensemble_json(ens))
    return {"nodes": len(ens), "condition": hout_condition(p), **p.summary()}


def _function(cfg, d):
    kind = cfg["function"]
    if kind == "identity":
        return lambda X: X
    if kind == "poly":
        a = np.zeros(d) if cfg["a"] is None else cfg["a"]
        b = np.zeros(d) if cfg["b"] is None else cfg["b"]
        if len(a) != d or len(b) != d:
            raise UsageError(f"a and b must have {d} entries")
        return ex.poly_f(ex.PolySpec(a, b, cfg["n"], ()), cfg["c"])
    if kind == "lorenz":
        if d != 3:
            raise UsageError("lorenz needs a 3-dimensional ensemble")

        def flow(X):
            for _ in range(cfg["steps"]):
                X = ex.lorenz_rk4_step(X, cfg["dt"])
            return X
        return flow
    raise UsageError(f"unknown function {kind!r}")


def cmd_propagate(cfg):
    ens = read_ensemble_csv(cfg["ensemble"])
    f = _function(cfg, ens.dim)
    Y, m = propagate(ens, f, vectorized=True)
    write_json(cfg["out"], m.to_json())
    if cfg["outputs"]:
        rows = [{"index": i, "weight": float(w), **{f"y_{j + 1}": float(v) for j, v in enumerate(y)}}
                for i, (w, y) in enumerate(zip(ens.weights, Y))]
        write_table(cfg["outputs"], rows,
                    ["index", "weight"] + [f"y_{j + 1}" for j in range(Y.shape[1])])
    return {"nodes": len(ens), "outputs": Y.shape[1]}


def cmd_poly_study(cfg):
    ng = ex.NonGaussianSpec(d=cfg["d"], ensemble_size=cfg["ensemble_size"], seed=cfg["seed"],
                            A=cfg["A"], B=cfg["B"])
    polys = ex.random_polys(cfg["d"], cfg["powers"], cfg["c_values"], cfg["seed"])
    rows = ex.polynomial_study(ng, polys, cfg["tau"], cfg["betas"], cfg["gammas"])
    write_table(cfg["out"], rows, ex.POLY_COLUMNS)
    summary = {"rows": len(rows), "A": ng.A, "B": ng.B,
               "polys": [{"n": p.n, "a": p.a, "b": p.b} for p in polys]}
    if cfg["summary"]:
        write_json(cfg["summary"], summary)
    return {"rows": len(rows)}


def cmd_lorenz_study(cfg):
    fields = {k: cfg[k] for k in ex.LorenzSpec.__dataclass_fields__}
    try:
        spec = ex.LorenzSpec(**fields)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rep = ex.forecast_study(spec, cfg["threads"])
    write_table(cfg["out"], rep.rows(), ex.SKILL_COLUMNS)
    summary = {"trials_used": rep.trials_used, "trials_skipped": rep.trials_skipped,
               "spec": fields}
    if cfg["summary"]:
        write_json(cfg["summary"], summary)
    return {"trials_used": rep.trials_used, "trials_skipped": rep.trials_skipped}


def cmd_verify_bounds(cfg):
    if not 1 <= cfg["dim"] <= 3:
        raise UsageError("verify-bounds supports dim 1..3")
    rng = _rng(cfg)
    rows, decay, violations = [], [], 0
    i = 0
    for k in cfg["orders"]:
        c_k = BOUNDS.for_order(k)
        for t in range(cfg["count"]):
            T = random_symmetric(cfg["dim"], k, rng)
            lam, entry, ratio = verify_entry_bound(T, cfg["grid_resolution"])
            ok = lam >= c_k * entry
            violations += not ok
            rows.append({"index": i, "order": k, "dim": cfg["dim"], "lambda_maxabs": lam,
                         "max_entry": entry, "ratio": ratio, "c_k": c_k, "ok": ok})
            if cfg["decay_out"]:
                dec = approx_rank1_decompose(T, 1e-10, rng=rng)
                r = dec.residual_norms
                decay += [{"order": k, "dim": cfg["dim"], "tensor": i, "term": j + 1,
                           "residual_before": r[j], "residual_after": r[j + 1],
                           "ratio": r[j + 1] / r[j], "rate_bound": dec.rate_bound}
                          for j in range(len(dec))]
            i += 1
    write_table(cfg["out"], rows, BOUNDS_COLUMNS)
    if cfg["decay_out"]:
        write_table(cfg["decay_out"], decay, DECAY_COLUMNS)
    if violations:
        raise HoutError(f"{violations} of {len(rows)} tensors violate the entry bound",
                        operation="verify_entry_bound")
    return {"tensors": len(rows), "violations": 0}


HANDLERS = {
    "decompose": cmd_decompose, "sut": cmd_sut, "hout": cmd_hout, "propagate": cmd_propagate,
    "poly-study": cmd_poly_study, "lorenz-study": cmd_lorenz_study,
    "verify-bounds": cmd_verify_bounds,
}


def _fail(kind, operation, message, code):
    sys.stderr.write(json.dumps({"error": kind, "operation": operation,
                                 "message": message}, sort_keys=True) + "\n")
    return code


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code not in (0, None):
            return _fail("UsageError", "parse_args", "invalid command line", 2)
        return 0
    try:
        cfg = resolve(args)
        result = HANDLERS[args.command](cfg)
    except UsageError as exc:
        return _fail("UsageError", args.command, str(exc), 2)
    except HoutError as exc:
        return _fail(type(exc).__name__, exc.operation, str(exc), 1)
    except (OSError, ValueError, KeyError, np.linalg.LinAlgError) as exc:
        return _fail(type(exc).__name__, args.command, str(exc), 1)
    sys.stdout.write(dumps(result) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())

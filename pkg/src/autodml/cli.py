"""Configuration-driven command line front end.

Usage::

    autodml --config run.json --output outdir [--seed N]

The config is one JSON document; its ``command`` is one of ``estimate``,
``simulate``, ``coverage``, ``diagnose`` or ``sweep``. Exit codes: 0 success,
2 config error, 3 data error, 4 numerical failure. On failure an error
document is printed to stderr and written to ``<output>/error.json``.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

import numpy as np
from jsonschema import Draft202012Validator
from sklearn.base import clone

from .data import Dataset, Schema, attach_simulated_draws, load_csv
from .estimator import (
    AutoDML,
    alpha_robustness_check,
    assumption_diagnostics,
    derive_seed,
    orthogonality_check,
)
from .exceptions import AutoDMLError, ConfigError, DataError, NumericalError, SchemaError
from .funcspace import DictionaryFunction, constant_function, support_basis
from .learners import learner_from_dict
from .problems import ProblemSpec
from .riesz import AlphaLearnerConfig, learn_alpha_multi, learn_alpha_single
from .sim import (
    BUILTIN_DGPS,
    convergence_sweep,
    make_dgp,
    monte_carlo,
    write_replications,
    write_summary,
    write_sweep,
)
from .train import LossSpec

COMMANDS = ("estimate", "simulate", "coverage", "diagnose", "sweep")
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

_learner = {"type": "object", "properties": {"type": {"enum": ["mlp", "partially_linear",
                                                               "dictionary"]}},
            "required": ["type"]}
_learners = {"oneOf": [_learner, {"type": "array", "items": _learner, "minItems": 1}]}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["command", "data"],
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": "string"},
                "schema": {"type": "object"},
                "dgp": {"type": "string"},
                "params": {"type": "object"},
                "n": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "problem": {
            "type": "object",
            "required": ["residuals", "functional"],
            "properties": {
                "residuals": {"type": "array", "minItems": 1, "items": {
                    "type": "object", "required": ["family", "x"],
                    "properties": {"family": {"enum": ["linear", "ipw", "glm_logistic"]},
                                   "x": {"type": "array", "items": {"type": "string"},
                                         "minItems": 1},
                                   "y": {"type": "string"}, "d": {"type": "string"}}}},
                "functional": {"type": "object", "required": ["kind"]},
            },
        },
        "gamma_learner": _learners,
        "alpha_learner": _learners,
        "folds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"L": {"type": "integer", "minimum": 2},
                           "double_crossfit": {"type": "boolean"}},
        },
        "seed": {"type": "integer", "minimum": 0},
        "level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "n_jobs": {"type": ["integer", "null"]},
        "gateaux": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"step": {"type": "number", "exclusiveMinimum": 0},
                           "mode": {"enum": ["auto", "numeric"]}},
        },
        "thresholds": {"type": "object"},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"psi": {"type": "boolean"}},
        },
        "coverage": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"reps": {"type": "integer", "minimum": 1},
                           "min_success": {"type": "number", "minimum": 0, "maximum": 1}},
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n_grid"],
            "properties": {"n_grid": {"type": "array", "items": {"type": "integer",
                                                                  "minimum": 2},
                                      "minItems": 1},
                           "seeds": {"type": "array", "items": {"type": "integer"},
                                     "minItems": 1},
                           "j": {"type": "integer", "minimum": 0}},
        },
        "diagnose": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"tau_grid": {"type": "array", "items": {"type": "number"}},
                           "delta": {"type": "number"},
                           "alpha_draws": {"type": "integer", "minimum": 0}},
        },
    },
}

DEFAULTS = {
    "gamma_learner": {"type": "dictionary"},
    "alpha_learner": {"type": "dictionary"},
    "folds": {"L": 5, "double_crossfit": False},
    "seed": 0,
    "level": 0.95,
    "n_jobs": None,
    "gateaux": {"step": 1e-4, "mode": "auto"},
    "thresholds": {},
    "output": {"psi": False},
    "coverage": {"reps": 100, "min_success": 0.9},
    "sweep": {"seeds": [0, 1, 2, 3, 4], "j": 0},
    "diagnose": {"tau_grid": [0.0, 0.025, 0.05, 0.1, 0.2], "delta": 1.0, "alpha_draws": 5},
}


def resolve_config(raw: dict, seed: int | None = None) -> dict:
    """Validate ``raw`` and fill defaults; raises :class:`ConfigError` listing every problem."""
    errors = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}"
              for e in Draft202012Validator(CONFIG_SCHEMA).iter_errors(raw)]
    errors.sort()
    try:
        cfg = _semantic_checks(raw, seed, errors)
    except (AttributeError, TypeError, KeyError, IndexError):
        # only reachable on configs that already failed schema validation
        cfg = None
    if errors:
        raise ConfigError(errors)
    return cfg


def _semantic_checks(raw, seed, errors):
    cfg = copy.deepcopy(raw)
    for key, value in DEFAULTS.items():
        if isinstance(value, dict):
            cfg[key] = {**value, **cfg.get(key, {})}
        else:
            cfg.setdefault(key, value)
    if seed is not None:
        cfg["seed"] = int(seed)
    data = cfg["data"]
    has_path, has_dgp = "path" in data, "dgp" in data
    if has_path == has_dgp:
        errors.append("data: exactly one of 'path' or 'dgp' is required")
    if has_dgp:
        if data["dgp"] not in BUILTIN_DGPS:
            errors.append(f"data/dgp: unknown dgp {data['dgp']!r}; "
                          f"expected one of {sorted(BUILTIN_DGPS)}")
        if "n" not in data:
            errors.append("data/n: required with a dgp source")
        data.setdefault("params", {})
        data.setdefault("seed", derive_seed(cfg["seed"], 0))
        if data["dgp"] in BUILTIN_DGPS:
            try:
                make_dgp(data["dgp"], **data["params"])
            except (ValueError, TypeError) as err:
                errors.append(f"data/params: {err}")
    if has_path:
        data.setdefault("schema", {})
        if "problem" not in cfg:
            errors.append("problem: required with a file source")
        for key in ("n", "params", "seed"):
            if key in data:
                errors.append(f"data/{key}: only valid with a dgp source")
        if cfg["command"] in ("simulate", "coverage", "sweep"):
            errors.append(f"command {cfg['command']!r} needs a dgp source")
    if "problem" in cfg:
        try:
            ProblemSpec.from_dict(cfg["problem"])
        except (ValueError, TypeError, KeyError) as err:
            errors.append(f"problem: {err}")
    for side in ("gamma_learner", "alpha_learner"):
        specs = cfg[side] if isinstance(cfg[side], list) else [cfg[side]]
        for k, spec in enumerate(specs):
            try:
                learner_from_dict(spec)._train_config()
            except (ValueError, TypeError) as err:
                errors.append(f"{side}[{k}]: {err}")
    grid = cfg["sweep"].get("n_grid")
    if cfg["command"] == "sweep" and grid is None:
        errors.append("sweep/n_grid: required for the sweep command")
    if grid is not None and any(b <= a for a, b in zip(grid, grid[1:])):
        errors.append("sweep/n_grid: must be strictly increasing")
    return cfg


# -- building blocks -------------------------------------------------------------

def _dgp(cfg):
    return make_dgp(cfg["data"]["dgp"], **cfg["data"]["params"])


def _problem(cfg, dgp=None):
    if "problem" in cfg:
        return ProblemSpec.from_dict(cfg["problem"])
    return dgp.problem


def _learners(spec):
    return [learner_from_dict(s) for s in spec] if isinstance(spec, list) \
        else learner_from_dict(spec)


def _dataset(cfg, problem, dgp=None) -> Dataset:
    data = cfg["data"]
    if dgp is not None:
        return dgp.sample(data["n"], data["seed"])
    ds = load_csv(data["path"], Schema(data["schema"]))
    f = problem.functional
    if f.kind == "avg_derivative" and f.draw not in ds.columns:
        ds = attach_simulated_draws(ds, f.density, derive_seed(cfg["seed"], 2), f.draw)
    problem.validate(ds)
    return ds


def _estimator(cfg, problem):
    n_jobs = cfg["n_jobs"] if cfg["n_jobs"] is not None else (os.cpu_count() or 1)
    return AutoDML(problem, _learners(cfg["gamma_learner"]), _learners(cfg["alpha_learner"]),
                   n_folds=cfg["folds"]["L"], double_crossfit=cfg["folds"]["double_crossfit"],
                   level=cfg["level"], random_state=cfg["seed"], n_jobs=n_jobs,
                   gateaux_step=cfg["gateaux"]["step"], gateaux_mode=cfg["gateaux"]["mode"],
                   thresholds=cfg["thresholds"] or None)


def _dump(doc, path):
    with open(path, "w") as fh:
        json.dump(_plain(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


# -- commands ----------------------------------------------------------------------

def cmd_estimate(cfg, out):
    dgp = _dgp(cfg) if "dgp" in cfg["data"] else None
    problem = _problem(cfg, dgp)
    ds = _dataset(cfg, problem, dgp)
    est = _estimator(cfg, problem).fit(ds)
    report = est.report_
    artifacts = ["report.json"]
    if cfg["output"]["psi"]:
        report.psi_to_csv(os.path.join(out, "psi.csv"))
        artifacts.append("psi.csv")
    _dump({**report.to_dict(), "config": cfg}, os.path.join(out, "report.json"))
    return artifacts


def cmd_simulate(cfg, out):
    dgp = _dgp(cfg)
    ds = dgp.sample(cfg["data"]["n"], cfg["data"]["seed"])
    ds.to_csv(os.path.join(out, "data.csv"))
    oracles = dgp.oracles()
    doc = {**oracles.to_dict(), "problem": dgp.problem.to_dict(), "config": cfg,
           "seeds": {"seed": cfg["seed"], "data_seed": cfg["data"]["seed"]}}
    _dump(doc, os.path.join(out, "oracles.json"))
    return ["data.csv", "oracles.json"]


def cmd_coverage(cfg, out):
    dgp = _dgp(cfg)
    problem = _problem(cfg, dgp)
    if problem is not dgp.problem:
        dgp = dgp.with_problem(problem)
    est = _estimator(cfg, problem).set_params(n_jobs=None)
    n_jobs = cfg["n_jobs"] if cfg["n_jobs"] is not None else (os.cpu_count() or 1)
    table, summary = monte_carlo(dgp, cfg["data"]["n"], cfg["coverage"]["reps"], est,
                                 master_seed=cfg["seed"], n_jobs=n_jobs,
                                 min_success=cfg["coverage"]["min_success"])
    write_replications(table, os.path.join(out, "replications.csv"))
    failures = [{"rep": r["rep"], "seed": r["seed"], "error": r["error"]}
                for r in table if "error" in r]
    write_summary(_plain(summary), os.path.join(out, "summary.json"), config=cfg,
                  seeds={"master_seed": cfg["seed"],
                         "replicate_seeds": [r["seed"] for r in table]},
                  failures=failures)
    return ["replications.csv", "summary.json"]


def _random_alphas(points, draws, seed):
    rng = np.random.default_rng(seed)
    basis = support_basis(points)
    return [DictionaryFunction(points.shape[1], basis, rng.normal(size=len(basis)))
            for _ in range(draws)]


def cmd_diagnose(cfg, out):
    dgp = _dgp(cfg) if "dgp" in cfg["data"] else None
    problem = _problem(cfg, dgp)
    ds = _dataset(cfg, problem, dgp)
    rows = np.arange(ds.n)
    seed = cfg["seed"]
    gl, al = _learners(cfg["gamma_learner"]), _learners(cfg["alpha_learner"])
    gls = gl if isinstance(gl, list) else [gl] * problem.J
    als = al if isinstance(al, list) else [al] * problem.J
    gammas = [clone(gls[j]).set_params(random_state=derive_seed(seed, 0, j, 0))
              .fit_loss(LossSpec.regression(res), ds, rows)[0]
              for j, res in enumerate(problem.residuals)]
    alphas = []
    for j in range(problem.J):
        acfg = AlphaLearnerConfig(clone(als[j]).set_params(random_state=derive_seed(seed, 0, j, 1)),
                                  cfg["gateaux"]["step"], cfg["gateaux"]["mode"])
        alphas.append(learn_alpha_single(ds, rows, problem, gammas[0], acfg) if problem.J == 1
                      else learn_alpha_multi(ds, rows, problem, gammas, j, acfg))
    diag, warnings = assumption_diagnostics(ds, problem, gammas, alphas,
                                            cfg["thresholds"] or None)
    doc = {"assumptions": diag, "warnings": warnings, "config": cfg, "seeds": {"seed": seed}}
    if dgp is not None:
        dgp = dgp if problem is dgp.problem else dgp.with_problem(problem)
        oracles = dgp.oracles()
        population = dgp.atoms() if hasattr(dgp, "atoms") else ds
        d = cfg["diagnose"]
        deltas = [constant_function(d["delta"], len(res.x)) for res in problem.residuals]
        table = orthogonality_check(problem, oracles.gamma0, oracles.alpha0, deltas,
                                    d["tau_grid"], population, oracles.theta0)
        doc["theta0"] = oracles.theta0
        doc["orthogonality"] = [{"tau": t, "delta": v, "ratio_1": r1, "ratio_2": r2}
                                for t, v, r1, r2 in table]
        robust = []
        if hasattr(dgp, "block_support") and d["alpha_draws"]:
            draws = [_random_alphas(dgp.block_support(j)[0], d["alpha_draws"],
                                    derive_seed(seed, 3, j)) for j in range(problem.J)]
            for k in range(d["alpha_draws"]):
                robust.append(alpha_robustness_check(
                    problem, oracles.gamma0, [draws[j][k] for j in range(problem.J)],
                    population, oracles.theta0))
        doc["alpha_robustness"] = robust
    _dump(doc, os.path.join(out, "diagnostics.json"))
    return ["diagnostics.json"]


def cmd_sweep(cfg, out):
    dgp = _dgp(cfg)
    problem = _problem(cfg, dgp)
    if problem is not dgp.problem:
        dgp = dgp.with_problem(problem)
    gl, al = _learners(cfg["gamma_learner"]), _learners(cfg["alpha_learner"])
    if isinstance(gl, list) or isinstance(al, list):
        raise ConfigError("sweep uses one shared learner per side")
    s = cfg["sweep"]
    acfg = AlphaLearnerConfig(al, cfg["gateaux"]["step"], cfg["gateaux"]["mode"])
    raw, table = convergence_sweep(dgp, s["n_grid"], s["seeds"], gl, acfg, s["j"])
    write_sweep(table, os.path.join(out, "sweep.csv"))
    _dump({"table": table, "runs": raw, "config": cfg, "seeds": {"seeds": s["seeds"]}},
          os.path.join(out, "sweep.json"))
    return ["sweep.csv", "sweep.json"]


COMMAND_FUNCS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "coverage": cmd_coverage,
                 "diagnose": cmd_diagnose, "sweep": cmd_sweep}


def _error(out, code, err):
    doc = {"status": "error", "exit_code": code, "type": type(err).__name__,
           "message": str(err)}
    if isinstance(err, ConfigError):
        doc["errors"] = err.errors
    text = json.dumps(doc, indent=2, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            os.makedirs(out, exist_ok=True)
            with open(os.path.join(out, "error.json"), "w") as fh:
                fh.write(text + "\n")
        except OSError:
            pass
    return code


def run(config_path, output, seed=None) -> int:
    """Execute one configured run; returns the process exit status."""
    try:
        try:
            with open(config_path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        cfg = resolve_config(raw, seed)
        os.makedirs(output, exist_ok=True)
        COMMAND_FUNCS[cfg["command"]](cfg, output)
    except ConfigError as err:
        return _error(output, EXIT_CONFIG, err)
    except (SchemaError, DataError) as err:
        return _error(output, EXIT_DATA, err)
    except NumericalError as err:
        return _error(output, EXIT_NUMERICAL, err)
    except (AutoDMLError, ValueError, TypeError, KeyError) as err:
        return _error(output, EXIT_CONFIG, err)
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="autodml", description=__doc__.split("\n")[0])
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--output", required=True, help="directory for the run's artifacts")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    args = parser.parse_args(argv)
    return run(args.config, args.output, args.seed)


if __name__ == "__main__":
    sys.exit(main())

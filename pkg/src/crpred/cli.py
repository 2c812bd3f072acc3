"""Batch front end: ``crpred <command> --config run.json [--seed N] [--out r.json] [--csv t.csv]``.

A run evaluates one command over a theta grid and writes a JSON report (and
optionally a CSV table of the same numbers). Exit codes: 0 success, 2 config
error, 3 numerical or singularity error, 4 a check returned a failing verdict.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Optional

import jsonschema
import numpy as np

from . import __version__
from .bounds import (BiasedPredictand, check_assumptions, cr_bound_unbiased, evaluate_biased,
                     evaluate_predictor, msep_decompose, qep)
from .catalog import CatalogEntry, get_entry
from .covariance import covariance_bound, random_joint
from .errors import AbsoluteContinuityError, ConfigError, CRPredError, DomainError, SupportError
from .expectation import IntegrationSpec
from .l2diff import (check_continuous_l2, check_l2_diff, check_lemma_106, default_spec,
                     fisher_information, score_batch, score_mean)
from .model import as_batch
from .reconstruction import axis_path, polyline_path, reconstruct, straight_path, validate_density_ratio

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERDICT = 0, 2, 3, 4

COMMANDS = ("fisher", "score", "l2diag", "lemma106", "continuity", "bound", "qep", "efficiency",
            "biased-bound", "msep", "lemma1", "reconstruct", "check-assumptions")

_point = {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}, "minItems": 1}]}
_int_or_list = {"oneOf": [{"type": "integer", "minimum": 1},
                          {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}]}

_integration = {
    "type": "object", "additionalProperties": False, "required": ["mode"],
    "properties": {
        "mode": {"enum": ["exact_discrete", "quadrature", "monte_carlo"]},
        "n": {"type": "integer", "minimum": 100},
        "seed": {"type": "integer", "minimum": 0},
        "nodes": {"type": "integer", "minimum": 15},
        "order": {"type": "integer", "minimum": 1},
        "width": {"type": "number", "exclusiveMinimum": 0},
        "workers": {"type": "integer", "minimum": 1},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": {"type": "string"},
        "predictand": {"type": "string"},
        "predictor": {"type": "string"},
        "theta_grid": {"oneOf": [
            {"type": "array", "items": _point, "minItems": 1},
            {"type": "object", "additionalProperties": False, "required": ["from", "to", "count"],
             "properties": {"from": _point, "to": _point, "count": _int_or_list}},
        ]},
        "theta0": _point,
        "integration": _integration,
        "fisher_integration": _integration,
        "u_grid": {"type": "array", "items": _point, "minItems": 1},
        "x_points": {"type": "array", "items": _point, "minItems": 1},
        "step": {"type": "number", "exclusiveMinimum": 0},
        "tolerance": {"type": "number", "exclusiveMinimum": 0},
        "weighting": {"enum": ["dominating", "reference"]},
        "path": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["straight", "axis", "polyline"]},
                "via": {"type": "array", "items": _point},
                "n_steps": {"type": "integer", "minimum": 4, "multipleOf": 4},
            },
        },
        "lemma1": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "instances": {"type": "integer", "minimum": 1},
                "k": {"type": "integer", "minimum": 1},
                "d": {"type": "integer", "minimum": 1},
                "m": {"type": "integer", "minimum": 1},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "workers": {"type": "integer", "minimum": 1},
        "timings": {"type": "boolean"},
    },
}


# --- serialization -------------------------------------------------------------

def _scalar(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    f = float(v)
    if math.isfinite(f):
        return f
    return "nan" if math.isnan(f) else ("inf" if f > 0 else "-inf")


def to_json_value(v):
    """Numpy-aware conversion; arrays become {"shape", "values"} in row-major order."""
    if isinstance(v, dict):
        return {str(k): to_json_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)) and not (v and all(isinstance(x, (int, float, np.number)) for x in v)):
        return [to_json_value(x) for x in v]
    if isinstance(v, (str, type(None))):
        return v
    arr = np.asarray(v)
    if arr.ndim == 0:
        return _scalar(arr.item())
    return {"shape": list(arr.shape), "values": [_scalar(x) for x in arr.ravel().tolist()]}


def _flatten(prefix: str, v, out: dict):
    if isinstance(v, dict) and set(v) == {"shape", "values"}:
        for i, x in enumerate(v["values"]):
            idx = np.unravel_index(i, v["shape"]) if v["shape"] else ()
            out[f"{prefix}[{','.join(str(int(j)) for j in idx)}]"] = x
    elif isinstance(v, dict):
        for k, x in v.items():
            _flatten(f"{prefix}.{k}" if prefix else k, x, out)
    elif isinstance(v, list):
        for i, x in enumerate(v):
            _flatten(f"{prefix}[{i}]", x, out)
    else:
        out[prefix] = v


def records_to_csv(records: list) -> str:
    rows = []
    for rec in records:
        flat: dict = {}
        _flatten("", rec, flat)
        rows.append(flat)
    columns: list = []
    for row in rows:
        for c in row:
            if c not in columns:
                columns.append(c)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow(["" if c not in row else (json.dumps(row[c]) if not isinstance(row[c], str) else row[c])
                    for c in columns])
    return buf.getvalue()


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=False, allow_nan=False) + "\n"


# --- config ----------------------------------------------------------------------

def load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict):
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from exc


def _vec(v, d: int, what: str) -> np.ndarray:
    a = np.atleast_1d(np.asarray(v, dtype=float))
    if a.size == 1 and d > 1:
        a = np.full(d, float(a[0]))
    if a.shape != (d,):
        raise ConfigError(f"{what} must have {d} coordinate(s), got {a.tolist()}")
    return a


def theta_grid(cfg: dict, d: int) -> list:
    grid = cfg.get("theta_grid")
    if grid is None:
        raise ConfigError("this command needs theta_grid")
    if isinstance(grid, list):
        return [_vec(t, d, "theta_grid entry") for t in grid]
    lo, hi = _vec(grid["from"], d, "theta_grid.from"), _vec(grid["to"], d, "theta_grid.to")
    count = grid["count"]
    counts = [count] * d if isinstance(count, int) else list(count)
    if len(counts) != d:
        raise ConfigError(f"theta_grid.count must have {d} entries")
    axes = [np.linspace(a, b, c) for a, b, c in zip(lo, hi, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return [np.array(p) for p in np.stack([m.ravel() for m in mesh], axis=-1)]


def integration_spec(cfg: dict, model, seed: int, key: str = "integration") -> Optional[IntegrationSpec]:
    ic = cfg.get(key)
    if ic is None:
        return default_spec(model, seed=seed) if key == "integration" else None
    mode = ic["mode"]
    try:
        if mode == "monte_carlo":
            return IntegrationSpec.monte_carlo(ic.get("n", 100_000), seed, ic.get("workers", 1))
        if mode == "quadrature":
            return IntegrationSpec.quadrature(ic.get("nodes", 320), ic.get("width", 10.0), ic.get("order", 16))
        return IntegrationSpec.exact()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def effective_seed(cfg: dict, flag: Optional[int]) -> int:
    if flag is not None:
        return int(flag)
    env = os.environ.get("CRPRED_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"CRPRED_SEED must be an unsigned integer, got {env!r}") from exc
    return int(cfg.get("integration", {}).get("seed", cfg.get("seed", 0)))


def _lookup(table: dict, key: Optional[str], what: str, entry: CatalogEntry):
    if key is None:
        if len(table) == 1:
            return next(iter(table.values()))
        raise ConfigError(f"{entry.id}: {what} required; choose from {sorted(table)}")
    if key not in table:
        raise ConfigError(f"{entry.id}: unknown {what} {key!r}; choose from {sorted(table)}")
    return table[key]


# --- commands --------------------------------------------------------------------

class Run:
    """Everything a command needs, resolved from a validated config."""

    def __init__(self, command: str, cfg: dict, seed: int):
        self.command = command
        self.cfg = cfg
        self.seed = seed
        self.entry = get_entry(cfg["model"])
        self.model = self.entry.model
        self.spec = integration_spec(cfg, self.model, seed)
        # None selects the library default, which reduces iid replicates to one
        # exact or quadrature marginal
        self.fisher_spec = integration_spec(cfg, self.model, seed, "fisher_integration")
        self.d = self.model.dim

    def predictand(self):
        return _lookup(self.entry.predictands, self.cfg.get("predictand"), "predictand", self.entry)

    def predictor(self):
        return _lookup(self.entry.predictors, self.cfg.get("predictor"), "predictor", self.entry)

    def theta0(self):
        if "theta0" not in self.cfg:
            raise ConfigError("this command needs theta0")
        return _vec(self.cfg["theta0"], self.d, "theta0")

    def grid(self):
        return theta_grid(self.cfg, self.d)

    def u_grid(self):
        if "u_grid" not in self.cfg:
            raise ConfigError("this command needs u_grid")
        return [_vec(u, self.d, "u_grid entry") for u in self.cfg["u_grid"]]


def _fisher(run: Run, theta):
    spec = run.fisher_spec or (run.spec if "integration" in run.cfg else None)
    f = fisher_information(run.model, theta, spec)
    return {"fisher": f.value, "std_error": f.std_error, "min_eigenvalue": f.min_eigenvalue,
            "condition_number": f.condition_number}, None


def _score(run: Run, theta):
    if "x_points" not in run.cfg:
        raise ConfigError("score needs x_points")
    xb, _ = as_batch(np.asarray(run.cfg["x_points"], dtype=float), run.model.obs_dim)
    step = run.cfg.get("step")
    m = score_mean(run.model, theta, run.spec)
    mean = np.asarray(m.value).reshape(-1)
    se = np.asarray(m.std_error).reshape(-1)
    tol = np.maximum(3 * se, 1e-12)
    ok = bool(np.all(np.abs(mean) <= tol))
    return {"score": score_batch(run.model, xb, theta, step), "score_mean": mean,
            "score_mean_std_error": se, "zero_mean": ok}, ok


def _l2diag(run: Run, theta):
    r = check_l2_diff(run.model, theta, run.u_grid(), run.spec)
    return {"u_norms": r.u_norms, "remainders": r.remainders, "std_errors": r.std_errors,
            "fitted_exponent": r.fitted_exponent, "dropped": list(r.dropped), "passes": r.passes}, r.passes


def _lemma106(run: Run, theta):
    r = check_lemma_106(run.model, theta, run.u_grid(), run.spec)
    cond1 = {f"eps={e!r}": v for e, v in sorted(r.cond1_probabilities.items())}
    ok = r.cond1_pass and r.cond2_pass
    return {"u_norms": r.u_norms, "cond1_probabilities": cond1, "cond2_residuals": r.cond2_residuals,
            "cond1_pass": r.cond1_pass, "cond2_pass": r.cond2_pass}, ok


def _bound(run: Run, theta):
    r = cr_bound_unbiased(run.model, theta, run.predictand(), run.spec, run.fisher_spec)
    return {"bound": r.value, "G": r.G, "G_std_error": r.G_std_error, "fisher": r.fisher}, None


def _qep(run: Run, theta):
    r = qep(run.model, theta, run.predictor(), run.predictand(), run.spec)
    return {"qep": r.value, "std_error": r.std_error, "n_effective": r.n_effective}, None


def _report_fields(r):
    return {"qep": r.qep, "qep_std_error": r.qep_std_error, "bound": r.bound, "gap": r.gap,
            "gap_min_eigenvalue": r.gap_min_eigenvalue, "gap_std_error": r.gap_std_error,
            "equality_residual": r.equality_residual,
            "equality_residual_std_error": r.equality_residual_std_error,
            "G": r.G_used, "fisher": r.I_used, "form": r.form, "unbiased": r.unbiased}


def _efficiency(run: Run, theta):
    r = evaluate_predictor(run.model, theta, run.predictor(), run.predictand(), run.spec, run.fisher_spec)
    out = _report_fields(r)
    tol = run.cfg.get("tolerance", 1e-3)
    out["efficient"] = bool(r.equality_residual <= max(tol, 3 * r.equality_residual_std_error))
    out["bound_respected"] = bool(r.gap_min_eigenvalue >= -max(tol, 3 * r.gap_std_error))
    return out, out["bound_respected"]


def _biased(run: Run, theta):
    p = run.predictor()
    name = run.cfg.get("predictor")
    rb = run.entry.biased.get(name) if name else None
    if rb is None:
        rb = BiasedPredictand(run.predictand())
    r = evaluate_biased(run.model, theta, p, rb, run.spec, run.fisher_spec)
    out = _report_fields(r)
    out["bias"] = r.bias
    tol = run.cfg.get("tolerance", 1e-3)
    out["bound_respected"] = bool(r.gap_min_eigenvalue >= -max(tol, 3 * r.gap_std_error))
    return out, out["bound_respected"]


def _msep(run: Run, theta):
    joint = run.entry.joint
    if joint is None or "g_xy" not in run.entry.closed_forms:
        raise ConfigError(f"{run.entry.id} has no joint (X, Y) model for msep")
    spec = integration_spec(run.cfg, joint.model, run.seed)
    r = msep_decompose(joint, theta, run.predictor(), run.entry.closed_forms["g_xy"],
                       run.entry.closed_forms["r"], spec)
    return {"total": r.total, "qep_term": r.qep_term, "incompressible": r.incompressible, "cross": r.cross,
            "total_std_error": r.total_std_error, "qep_std_error": r.qep_std_error,
            "incompressible_std_error": r.incompressible_std_error, "cross_std_error": r.cross_std_error,
            "holds": r.holds}, r.holds


def _path(run: Run, theta0, theta):
    pc = run.cfg.get("path", {})
    kind = pc.get("kind", "straight")
    n_steps = pc.get("n_steps", 1000)
    if kind == "straight":
        return straight_path(theta0, theta, n_steps)
    if kind == "axis":
        return axis_path(theta0, theta, n_steps=n_steps)
    via = [_vec(v, run.d, "path.via entry") for v in pc.get("via", [])]
    return polyline_path([theta0, *via, theta], n_steps)


def _reconstruct(run: Run, theta):
    theta0 = run.theta0()
    g = run.predictand()
    path = _path(run, theta0, theta)
    rec = reconstruct(run.model, path, g, run.spec, fisher_spec=run.fisher_spec)
    out: dict[str, Any] = {"A": rec.A_theta, "A_error": rec.A_error}
    if "x_points" in run.cfg:
        xb, _ = as_batch(np.asarray(run.cfg["x_points"], dtype=float), run.model.obs_dim)
        b, err = rec.B_with_error(xb, run.model.obs_dim)
        out["B"] = b
        out["B_error"] = err
    ok = None
    if run.cfg.get("predictor") is not None:
        x_points = (np.asarray(run.cfg["x_points"], dtype=float) if "x_points" in run.cfg else None)
        dr = validate_density_ratio(run.model, theta0, theta, path, run.predictor(), g, run.spec,
                                    x_points=x_points, seed=run.seed, fisher_spec=run.fisher_spec)
        tol = run.cfg.get("tolerance", 1e-3)
        ok = bool(abs(dr.normalization - 1) <= max(tol, 3 * dr.normalization_std_error))
        out.update({"normalization": dr.normalization, "normalization_std_error": dr.normalization_std_error,
                    "pointwise_max_abs_log_error": dr.pointwise_max_abs_log_error, "normalized": ok})
    return out, ok


def _per_theta(fn):
    def command(run: Run):
        grid = run.grid()
        workers = run.cfg.get("workers", 1)

        def one(i):
            theta = run.model.domain.check(grid[i])
            try:
                rec, ok = fn(run, theta)
            except CRPredError as exc:
                raise type(exc)(f"{run.command} at theta={theta.tolist()}: {exc}") from exc
            return {"index": i, "theta": theta, **rec}, ok

        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                results = list(pool.map(one, range(len(grid))))
        else:
            results = [one(i) for i in range(len(grid))]
        results.sort(key=lambda r: r[0]["index"])
        return [r[0] for r in results], [r[1] for r in results if r[1] is not None]

    return command


def _continuity(run: Run):
    theta0 = run.theta0()
    r = check_continuous_l2(run.model, theta0, run.grid(), run.spec, run.cfg.get("tolerance", 1e-3),
                            run.cfg.get("weighting", "dominating"))
    recs = [{"index": i, "theta": t, "residual": v, "std_error": s}
            for i, (t, v, s) in enumerate(zip(r.thetas, r.residuals, r.std_errors))]
    return recs, [r.passes]


def _check_assumptions(run: Run):
    theta0 = run.theta0()
    r = check_assumptions(run.model, theta0, run.grid(), run.predictor(), run.predictand(), run.spec, run.fisher_spec)
    rec = {"index": 0, "theta": r.theta0, "fisher_condition": r.fisher_condition,
           "fisher_invertible": r.fisher_invertible, "sup_p_second_moment": r.sup_p_second_moment,
           "sup_jacobian_g_second_moment": r.sup_jacobian_g_second_moment,
           "sup_likelihood_ratio_second_moment": r.sup_likelihood_ratio_second_moment,
           "items": dict(sorted(r.items.items())), "passes": r.passes, "caveat": r.caveat}
    return [rec], [r.passes]


def _lemma1(run: Run):
    lc = run.cfg.get("lemma1", {})
    n, k, d, m = lc.get("instances", 1000), lc.get("k", 2), lc.get("d", 2), lc.get("m", 8)
    rng = np.random.default_rng(run.seed)
    recs, verdicts = [], []
    for i in range(n):
        rep = covariance_bound(random_joint(rng, k, d, m))
        trace_gap = abs(float(np.trace(rep.residual)) - rep.equality_residual)
        ok = bool(rep.min_eigenvalue >= -1e-10 and trace_gap <= 1e-10)
        recs.append({"index": i, "min_eigenvalue": rep.min_eigenvalue,
                     "equality_residual": rep.equality_residual, "trace_gap": trace_gap,
                     "condition_number": rep.condition_number, "passes": ok})
        verdicts.append(ok)
    return recs, verdicts


HANDLERS = {
    "fisher": _per_theta(_fisher),
    "score": _per_theta(_score),
    "l2diag": _per_theta(_l2diag),
    "lemma106": _per_theta(_lemma106),
    "continuity": _continuity,
    "bound": _per_theta(_bound),
    "qep": _per_theta(_qep),
    "efficiency": _per_theta(_efficiency),
    "biased-bound": _per_theta(_biased),
    "msep": _per_theta(_msep),
    "lemma1": _lemma1,
    "reconstruct": _per_theta(_reconstruct),
    "check-assumptions": _check_assumptions,
}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, DomainError)):
        return EXIT_CONFIG
    if isinstance(exc, (AbsoluteContinuityError, SupportError)):
        return EXIT_VERDICT
    return EXIT_NUMERICAL


def run(command: str, cfg: dict, seed: Optional[int] = None) -> tuple[dict, int]:
    """Execute ``command``; returns the report and the exit code.

    Library errors are caught and reported (with the exit code they map to);
    the report echoes the config with the effective seed so it re-runs identically.
    """
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    validate_config(cfg)
    eff = effective_seed(cfg, seed)
    echo = json.loads(json.dumps(cfg))
    echo["seed"] = eff
    for key in ("integration", "fisher_integration"):
        if "seed" in echo.get(key, {}):
            echo[key]["seed"] = eff
    report: dict[str, Any] = {"tool": "crpred", "version": __version__, "command": command, "config": echo}
    t0 = time.perf_counter()
    code = EXIT_OK
    try:
        records, verdicts = HANDLERS[command](Run(command, cfg, eff))
        report["records"] = to_json_value(records)
        report["passes"] = all(verdicts) if verdicts else None
        if verdicts and not all(verdicts):
            code = EXIT_VERDICT
    except (CRPredError, ValueError, np.linalg.LinAlgError) as exc:
        code = exit_code_for(exc)
        report["records"] = []
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
    if cfg.get("timings"):
        report["timings"] = {"total_seconds": time.perf_counter() - t0}
    report["exit_code"] = code
    return report, code


def main(argv: Optional[list] = None) -> int:
    parser = argparse.ArgumentParser(prog="crpred", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="overrides CRPRED_SEED and config seeds")
    parser.add_argument("--out", help="write the JSON report here instead of stdout")
    parser.add_argument("--csv", help="also write per-record values as CSV")
    args = parser.parse_args(argv)
    if args.seed is not None and args.seed < 0:
        print("crpred: --seed must be unsigned", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        report, code = run(args.command, cfg, args.seed)
    except ConfigError as exc:
        print(f"crpred: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if "error" in report:
        print(f"crpred {args.command}: {report['error']['message']}", file=sys.stderr)
    text = dumps(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(records_to_csv(report["records"]))
    return code


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: CSV ingestion, config files, dispatch, JSON out.

Datasets are plain delimited text with a header row, a binary treatment
column, a response column, and feature columns.  Features are standardized
to column norm sqrt(n) (scale only, no centering) before fitting, and all
reported coefficients are mapped back to the original column scale, so
decisions computed from raw covariates match the internal fit exactly.

Every subcommand emits one JSON document (except ``simulate``, which
writes a dataset as CSV).  JSON is serialized with sorted keys and no
timestamps, so a fixed seed yields byte-identical output across runs and
thread counts.

Exit codes: 0 success, 1 validation or usage error, 2 numerical failure
(a fit that did not converge when --strict is given).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .inference import estimate_sigma2, value_report
from .penalty import PenaltySpec, condition1_audit
from .regime import (
    Dataset,
    PhiMode,
    PropensityMode,
    RegimeEstimate,
    decide,
    fit_regime,
)
from .simulate import (
    Covariance,
    Model,
    Signal,
    SimulationScenario,
    SparseCoef,
    deviation_experiment,
    generate_dataset,
    run_study,
)
from .solver import DesignMatrix, FitResult, SolverOptions

__all__ = [
    "RunConfig",
    "TabularInput",
    "dispatch",
    "load_dataset",
    "main",
    "parse_config",
    "scenario_from_mapping",
]

SCHEMA_VERSION = 1
THREADS_ENV = "OPTREGIME_THREADS"
INTERCEPT_NAME = "(intercept)"


@dataclass(frozen=True)
class TabularInput:
    """How to read a delimited dataset file."""

    path: str
    response_col: str = "y"
    treatment_col: str = "a"
    feature_cols: tuple[str, ...] | None = None
    add_intercept: bool = True
    standardize: bool = True


def _parse_cell(raw: str, row: int, col: str) -> float:
    text = raw.strip()
    if not text:
        raise ValueError(f"row {row}, column '{col}': empty cell")
    try:
        value = float(text)
    except ValueError:
        raise ValueError(
            f"row {row}, column '{col}': non-numeric value {text!r}") from None
    if math.isnan(value) or math.isinf(value):
        raise ValueError(f"row {row}, column '{col}': non-finite value {text!r}")
    return value


def load_dataset(inp: TabularInput) -> Dataset:
    """Read, validate, and standardize a delimited dataset.

    Row numbers in error messages are 1-based data rows (the header is
    row 0).  Standardization rescales each feature column to norm
    sqrt(n); the per-column scales are kept on the design for reporting
    coefficients in the original units.
    """
    try:
        handle = open(inp.path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ValueError(f"cannot open dataset {inp.path!r}: {exc}") from None
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{inp.path!r} is empty; a header row is required")
        header = [cell.strip() for cell in header]
        rows = [row for row in reader if row]

    def looks_numeric(cell: str) -> bool:
        try:
            float(cell)
        except ValueError:
            return False
        return True

    if all(looks_numeric(cell) for cell in header if cell):
        raise ValueError(
            f"{inp.path!r} has no header row: first line is all-numeric")
    for col in (inp.response_col, inp.treatment_col):
        if col not in header:
            raise ValueError(
                f"column {col!r} not found in header {header!r}")
    if inp.feature_cols is None:
        feature_cols = tuple(
            c for c in header if c not in (inp.response_col, inp.treatment_col))
    else:
        feature_cols = tuple(inp.feature_cols)
        for col in feature_cols:
            if col not in header:
                raise ValueError(f"feature column {col!r} not found in header")
    if not feature_cols:
        raise ValueError("no feature columns remain after response/treatment")

    index = {name: header.index(name) for name in header}
    n = len(rows)
    if n < 2:
        raise ValueError(f"need at least 2 data rows, found {n}")

    y = np.empty(n)
    a = np.empty(n)
    X = np.empty((n, len(feature_cols)))
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ValueError(
                f"row {i}: expected {len(header)} cells, found {len(row)}")
        y[i - 1] = _parse_cell(row[index[inp.response_col]], i, inp.response_col)
        treat = _parse_cell(row[index[inp.treatment_col]], i, inp.treatment_col)
        if treat not in (0.0, 1.0):
            raise ValueError(
                f"row {i}, column '{inp.treatment_col}': treatment must be "
                f"0 or 1, got {row[index[inp.treatment_col]].strip()}")
        a[i - 1] = treat
        for j, col in enumerate(feature_cols):
            X[i - 1, j] = _parse_cell(row[index[col]], i, col)

    scales = np.ones(len(feature_cols))
    if inp.standardize:
        norms = np.linalg.norm(X, axis=0)
        zero = np.flatnonzero(norms == 0.0)
        if zero.size:
            raise ValueError(
                f"column '{feature_cols[zero[0]]}' has zero norm and cannot "
                "be standardized; drop it or pass standardize=false")
        scales = norms / math.sqrt(n)
        X = X / scales

    names: tuple[str, ...] = feature_cols
    if inp.add_intercept:
        X = np.hstack([np.ones((n, 1)), X])
        scales = np.concatenate([[1.0], scales])
        names = (INTERCEPT_NAME,) + names

    design = DesignMatrix(
        X,
        has_intercept=inp.add_intercept,
        standardized=inp.standardize,
        column_names=names,
        column_scales=scales,
    )
    return Dataset(y, a, design)


def parse_config(path: str) -> dict[str, str]:
    """Flat ``key = value`` file with dotted keys and ``#`` comments."""
    try:
        with open(path, encoding="utf-8") as handle:
            lines = handle.readlines()
    except OSError as exc:
        raise ValueError(f"cannot open config {path!r}: {exc}") from None
    out: dict[str, str] = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, _, value = text.partition("=")
        key = key.strip()
        value = value.strip().strip("\"'")
        if not key or not value:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        out[key] = value
    return out


def _parse_bool(value: str, key: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"{key}: expected a boolean, got {value!r}")


def _parse_lambda(value: str) -> float | None:
    if value.strip().lower() == "cv":
        return None
    lam = float(value)
    if lam < 0.0:
        raise ValueError(f"lambda must be nonnegative or 'cv', got {value!r}")
    return lam


@dataclass(frozen=True)
class RunConfig:
    """Resolved fitting configuration for the two-step pipeline."""

    penalties: tuple[PenaltySpec, PenaltySpec, PenaltySpec]
    opts: SolverOptions
    cv_folds: int = 10
    seed: int = 0
    propensity_mode: PropensityMode = PropensityMode.LOGISTIC
    phi_mode: PhiMode = PhiMode.LINEAR

    def __post_init__(self) -> None:
        if len(self.penalties) != 3:
            raise ValueError("exactly three per-stage penalties are required")
        needs_cv = any(spec.lam is None for spec in self.penalties)
        if needs_cv and self.cv_folds < 2:
            raise ValueError(
                "cv_folds must be at least 2 when any stage lambda is 'cv'")


_SOLVER_KEYS = {
    "tolerance": float,
    "max_sweeps": int,
    "lla_steps": int,
    "lambda_grid_size": int,
    "lambda_min_ratio": float,
    "kkt_tol": float,
}


def run_config_from_mapping(cfg: dict[str, str]) -> RunConfig:
    """Build a RunConfig from flat dotted keys.

    ``penalty``/``lambda``/``shape`` apply to all stages; ``stageK.*``
    (K = 1 propensity, 2 working mean, 3 contrast) override per stage.
    ``solver.*`` keys map onto solver options.
    """
    base_family = cfg.get("penalty", "scad")
    base_lambda = cfg.get("lambda", "cv")
    base_shape = cfg.get("shape")
    specs = []
    for k in (1, 2, 3):
        family = cfg.get(f"stage{k}.penalty", base_family)
        lam = _parse_lambda(cfg.get(f"stage{k}.lambda", base_lambda))
        shape = cfg.get(f"stage{k}.shape", base_shape)
        specs.append(PenaltySpec(
            family, lam=lam, shape=None if shape is None else float(shape)))

    solver_kwargs = {}
    for key, cast in _SOLVER_KEYS.items():
        raw = cfg.get(f"solver.{key}")
        if raw is not None:
            solver_kwargs[key] = cast(raw)
    unknown = [
        key for key in cfg
        if key.startswith("solver.") and key[len("solver."):] not in _SOLVER_KEYS
    ]
    if unknown:
        raise ValueError(f"unknown solver option {unknown[0]!r}")

    return RunConfig(
        penalties=tuple(specs),
        opts=SolverOptions(**solver_kwargs),
        cv_folds=int(cfg.get("cv_folds", "10")),
        seed=int(cfg.get("seed", "0")),
        propensity_mode=PropensityMode.from_name(
            cfg.get("propensity_mode", "logistic")),
        phi_mode=PhiMode.from_name(cfg.get("phi_mode", "linear")),
    )


def scenario_from_mapping(cfg: dict[str, str]) -> SimulationScenario:
    """Build a SimulationScenario from flat dotted keys."""

    def sparse(prefix: str) -> SparseCoef | None:
        pos_key, val_key = f"{prefix}.positions", f"{prefix}.values"
        if pos_key not in cfg and val_key not in cfg:
            return None
        if pos_key not in cfg or val_key not in cfg:
            raise ValueError(f"{prefix} needs both positions and values")
        positions = tuple(int(v) for v in cfg[pos_key].split(","))
        values = tuple(float(v) for v in cfg[val_key].split(","))
        return SparseCoef(positions, values)

    known = {
        "model", "n", "p", "covariance", "signal", "sigma_noise", "seed",
        "alpha0.positions", "alpha0.values", "beta0.positions", "beta0.values",
        "gamma1.positions", "gamma1.values", "gamma2.positions", "gamma2.values",
    }
    for key in cfg:
        if key not in known:
            raise ValueError(f"unknown scenario key {key!r}")
    return SimulationScenario(
        model=Model.from_name(cfg.get("model", "I")),
        n=int(cfg.get("n", "400")),
        p=int(cfg.get("p", "1000")),
        covariance=Covariance.from_name(cfg.get("covariance", "iid")),
        signal=Signal.from_name(cfg.get("signal", "moderate")),
        alpha0=sparse("alpha0"),
        beta0=sparse("beta0"),
        gamma1=sparse("gamma1"),
        gamma2=sparse("gamma2"),
        sigma_noise=float(cfg.get("sigma_noise", "0.5")),
        seed=int(cfg.get("seed", "0")),
    )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n"
    if out:
        with open(out, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)


def _cv_payload(report) -> dict | None:
    if report is None:
        return None
    return {
        "lambda_grid": report.lambda_grid,
        "mean_cv_loss": report.mean_cv_loss,
        "se_cv_loss": report.se_cv_loss,
        "selected_lambda": report.selected_lambda,
        "n_folds": report.n_folds,
        "degenerate": report.degenerate,
    }


def _destandardize(coefs: np.ndarray, scales: np.ndarray | None) -> np.ndarray:
    if scales is None:
        return coefs
    return coefs / scales


def _fit_payload(data: Dataset, est: RegimeEstimate, inp: TabularInput) -> dict:
    design = data.design
    scales = design.column_scales
    stages = {
        "alpha": est.alpha_hat,
        "theta": est.theta_hat,
        "beta": est.beta_hat,
    }
    return {
        "schema_version": SCHEMA_VERSION,
        "command": "fit",
        "n": data.n,
        "columns": list(design.column_names or []),
        "add_intercept": design.has_intercept,
        "standardize": inp.standardize,
        "response_col": inp.response_col,
        "treatment_col": inp.treatment_col,
        "column_scales": scales if scales is not None else [],
        "propensity_mode": est.propensity_mode.value,
        "phi_mode": est.phi_mode.value,
        "coefficients": {
            name: _destandardize(fit.coefficients, scales)
            for name, fit in stages.items()
        },
        "selected_lambdas": {name: fit.lam for name, fit in stages.items()},
        "converged": {name: fit.converged for name, fit in stages.items()},
        "kkt_residuals": {name: fit.kkt_residual for name, fit in stages.items()},
        "cv": {
            name: _cv_payload(report)
            for name, report in zip(("alpha", "theta", "beta"), est.cv_reports)
        },
        "pi_hat": est.pi_hat,
        "phi_hat": est.phi_hat,
    }


def _synth_fit(coef: np.ndarray) -> FitResult:
    coef = np.asarray(coef, dtype=np.float64).copy()
    coef.flags.writeable = False
    return FitResult(
        coefficients=coef,
        support=np.flatnonzero(coef).astype(np.int64),
        lam=0.0,
        objective=0.0,
        iterations=0,
        converged=True,
        kkt_residual=0.0,
    )


def _load_fit_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as handle:
            payload = json.load(handle)
    except OSError as exc:
        raise ValueError(f"cannot open fit file {path!r}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"fit file {path!r} is not valid JSON: {exc}") from None
    for key in ("coefficients", "add_intercept", "pi_hat", "phi_hat"):
        if key not in payload:
            raise ValueError(f"fit file {path!r} lacks required key {key!r}")
    return payload


def _parse_known_propensity(raw: str, n: int) -> np.ndarray:
    """A constant in (0,1) or a path to a file with one value per line."""
    try:
        value = float(raw)
    except ValueError:
        try:
            with open(raw, encoding="utf-8") as handle:
                values = [float(line) for line in handle if line.strip()]
        except OSError as exc:
            raise ValueError(
                f"--known-propensity must be a number or a readable file; "
                f"got {raw!r} ({exc})") from None
        arr = np.asarray(values)
        if arr.shape != (n,):
            raise ValueError(
                f"known propensity file has {arr.shape[0]} values, need {n}")
        return arr
    return np.full(n, value)


class _CliParser(argparse.ArgumentParser):
    def error(self, message):
        raise argparse.ArgumentError(None, message)


def _build_parser() -> _CliParser:
    parser = _CliParser(prog="optregime", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    def add_data_flags(p):
        p.add_argument("--data", required=True, help="dataset CSV path")
        p.add_argument("--response-col", default="y")
        p.add_argument("--treatment-col", default="a")
        p.add_argument("--no-intercept", action="store_true")
        p.add_argument("--no-standardize", action="store_true")

    def add_fit_flags(p):
        p.add_argument("--penalty", default=None,
                       help="penalty family for all stages (lasso|scad|mcp)")
        p.add_argument("--lambda", dest="lam", default=None,
                       help="lambda for all stages, or 'cv'")
        p.add_argument("--shape", type=float, default=None)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--cv-folds", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--propensity-mode", default=None,
                       choices=["logistic", "proportion", "known"])
        p.add_argument("--phi-mode", default=None, choices=["linear", "zero"])
        p.add_argument("--known-propensity", default=None,
                       help="constant or file; required for known mode")

    fit = sub.add_parser("fit", help="fit the two-step regime on a dataset")
    add_data_flags(fit)
    add_fit_flags(fit)
    fit.add_argument("--out", default=None)
    fit.add_argument("--strict", action="store_true")

    dec = sub.add_parser("decide", help="apply a fitted rule to one x")
    dec.add_argument("--fit", required=True, help="fit JSON from 'fit'")
    dec.add_argument("--x", required=True,
                     help="comma-separated raw feature values")
    dec.add_argument("--out", default=None)

    val = sub.add_parser("value", help="value estimate and CI for a fit")
    val.add_argument("--data", required=True)
    val.add_argument("--fit", required=True)
    val.add_argument("--known-propensity", default=None)
    val.add_argument("--sigma2", type=float, default=None)
    val.add_argument("--out", default=None)
    val.add_argument("--strict", action="store_true")

    sim = sub.add_parser("simulate", help="write one synthetic dataset as CSV")
    sim.add_argument("--scenario", default=None, help="scenario config file")
    sim.add_argument("--model", default=None)
    sim.add_argument("--n", type=int, default=None)
    sim.add_argument("--p", type=int, default=None)
    sim.add_argument("--covariance", default=None)
    sim.add_argument("--signal", default=None)
    sim.add_argument("--sigma-noise", type=float, default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--out", required=True, help="CSV output path")
    sim.add_argument("--truth-out", default=None,
                     help="optional JSON path for the generative truth")

    rep = sub.add_parser("replicate", help="replicated study with metrics")
    rep.add_argument("--scenario", default=None)
    rep.add_argument("--model", default=None)
    rep.add_argument("--n", type=int, default=None)
    rep.add_argument("--p", type=int, default=None)
    rep.add_argument("--covariance", default=None)
    rep.add_argument("--signal", default=None)
    rep.add_argument("--sigma-noise", type=float, default=None)
    rep.add_argument("--reps", type=int, required=True)
    rep.add_argument("--seed", type=int, default=None)
    rep.add_argument("--config", default=None, help="fit config file")
    rep.add_argument("--propensity-mode", default=None,
                     choices=["logistic", "proportion"])
    rep.add_argument("--threads", type=int, default=None)
    rep.add_argument("--mc-subjects", type=int, default=10000)
    rep.add_argument("--out", default=None)
    rep.add_argument("--csv", default=None, help="table-shaped CSV export")
    rep.add_argument("--strict", action="store_true")

    dev = sub.add_parser("deviation", help="supremum scaling experiment")
    dev.add_argument("--n", type=int, default=500)
    dev.add_argument("--J", type=int, default=200)
    dev.add_argument("--S", type=int, default=3)
    dev.add_argument("--deltas", default="0.05,0.1,0.2,0.4")
    dev.add_argument("--replicates", type=int, default=200)
    dev.add_argument("--seed", type=int, default=0)
    dev.add_argument("--lattice-points", type=int, default=5)
    dev.add_argument("--probes", type=int, default=32)
    dev.add_argument("--out", default=None)

    aud = sub.add_parser("audit-penalty", help="shape-condition audit")
    aud.add_argument("--family", required=True)
    aud.add_argument("--lambda", dest="lam", type=float, required=True)
    aud.add_argument("--shape", type=float, default=None)
    aud.add_argument("--grid", default="0.001,0.01,0.1,0.5,1,2,5")
    aud.add_argument("--out", default=None)

    return parser


def _tabular_from_args(args) -> TabularInput:
    return TabularInput(
        path=args.data,
        response_col=args.response_col,
        treatment_col=args.treatment_col,
        add_intercept=not args.no_intercept,
        standardize=not args.no_standardize,
    )


def _run_config_from_args(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else {}
    if args.penalty is not None:
        cfg["penalty"] = args.penalty
    if args.lam is not None:
        cfg["lambda"] = args.lam
    if args.shape is not None:
        cfg["shape"] = str(args.shape)
    if args.cv_folds is not None:
        cfg["cv_folds"] = str(args.cv_folds)
    if args.seed is not None:
        cfg["seed"] = str(args.seed)
    if getattr(args, "propensity_mode", None) is not None:
        cfg["propensity_mode"] = args.propensity_mode
    if getattr(args, "phi_mode", None) is not None:
        cfg["phi_mode"] = args.phi_mode
    return run_config_from_mapping(cfg)


def _scenario_from_args(args) -> SimulationScenario:
    cfg = parse_config(args.scenario) if args.scenario else {}
    overrides = {
        "model": args.model,
        "n": args.n,
        "p": args.p,
        "covariance": args.covariance,
        "signal": args.signal,
        "sigma_noise": args.sigma_noise,
        "seed": args.seed,
    }
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = str(value)
    return scenario_from_mapping(cfg)


def _cmd_fit(args) -> int:
    inp = _tabular_from_args(args)
    config = _run_config_from_args(args)
    data = load_dataset(inp)
    known = None
    if config.propensity_mode is PropensityMode.KNOWN:
        if args.known_propensity is None:
            raise ValueError("known propensity mode needs --known-propensity")
        known = _parse_known_propensity(args.known_propensity, data.n)
    est = fit_regime(
        data,
        config.penalties,
        opts=config.opts,
        propensity_mode=config.propensity_mode,
        phi_mode=config.phi_mode,
        known_propensity=known,
        cv_folds=config.cv_folds,
        seed=config.seed,
    )
    _emit(_fit_payload(data, est, inp), args.out)
    if args.strict and not est.converged:
        sys.stderr.write("fit did not converge\n")
        return 2
    return 0


def _cmd_decide(args) -> int:
    payload = _load_fit_json(args.fit)
    beta = np.asarray(payload["coefficients"]["beta"], dtype=float)
    try:
        x = np.array([float(v) for v in args.x.split(",")])
    except ValueError:
        raise ValueError(f"--x must be comma-separated numbers, got {args.x!r}")
    if payload["add_intercept"]:
        x = np.concatenate([[1.0], x])
    if x.shape != beta.shape:
        raise ValueError(
            f"x has {x.shape[0]} entries (intercept included) but the fit "
            f"has {beta.shape[0]} coefficients")
    decision = decide(beta, x)
    _emit({
        "schema_version": SCHEMA_VERSION,
        "command": "decide",
        "decision": int(decision),
        "score": float(x @ beta),
    }, args.out)
    return 0


def _regime_from_fit_payload(payload: dict, data: Dataset,
                             known: np.ndarray | None) -> RegimeEstimate:
    coefs = payload["coefficients"]
    pi_hat = np.asarray(payload["pi_hat"], dtype=float)
    phi_hat = np.asarray(payload["phi_hat"], dtype=float)
    if pi_hat.shape != (data.n,) or phi_hat.shape != (data.n,):
        raise ValueError(
            "fit file does not match the dataset: stored pi_hat/phi_hat "
            f"have length {pi_hat.shape[0]}, dataset has {data.n} rows")
    mode = PropensityMode.from_name(payload.get("propensity_mode", "logistic"))
    if known is not None:
        pi_hat = known
        mode = PropensityMode.KNOWN
    return RegimeEstimate(
        alpha_hat=_synth_fit(np.asarray(coefs["alpha"], dtype=float)),
        theta_hat=_synth_fit(np.asarray(coefs["theta"], dtype=float)),
        beta_hat=_synth_fit(np.asarray(coefs["beta"], dtype=float)),
        propensity_mode=mode,
        phi_mode=PhiMode.from_name(payload.get("phi_mode", "linear")),
        pi_hat=pi_hat,
        phi_hat=phi_hat,
        cv_reports=(None, None, None),
    )


def _cmd_value(args) -> int:
    payload = _load_fit_json(args.fit)
    inp = TabularInput(
        path=args.data,
        response_col=payload.get("response_col", "y"),
        treatment_col=payload.get("treatment_col", "a"),
        add_intercept=bool(payload["add_intercept"]),
        standardize=False,
    )
    data = load_dataset(inp)
    known = None
    if args.known_propensity is not None:
        known = _parse_known_propensity(args.known_propensity, data.n)
        if np.any(known <= 0.0) or np.any(known >= 1.0):
            raise ValueError("known propensities must lie strictly in (0, 1)")
    regime = _regime_from_fit_payload(payload, data, known)
    sigma2 = args.sigma2
    if sigma2 is None:
        sigma2 = estimate_sigma2(data, regime)
    report = value_report(data, regime, sigma2_hat=sigma2)
    _emit({
        "schema_version": SCHEMA_VERSION,
        "command": "value",
        "v_hat": report.v_hat,
        "variance": report.variance,
        "ci_lower": report.ci_lower,
        "ci_upper": report.ci_upper,
        "components": {
            "sigma2_hat": report.components.sigma2_hat,
            "term_main": report.components.term_main,
            "term_beta": report.components.term_beta,
            "term_sigma22": report.components.term_sigma22,
        },
        "n": data.n,
        "support_size_beta": int(
            np.count_nonzero(np.asarray(payload["coefficients"]["beta"]))),
    }, args.out)
    return 0


def _cmd_simulate(args) -> int:
    scn = _scenario_from_args(args)
    data, truth = generate_dataset(scn)
    X = data.design.values[:, 1:]
    with open(args.out, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["y", "a"] + [f"x{j}" for j in range(1, scn.p + 1)])
        for i in range(data.n):
            writer.writerow([repr(float(data.y[i])), repr(float(data.a[i]))]
                            + [repr(float(v)) for v in X[i]])
    if args.truth_out:
        _emit({
            "schema_version": SCHEMA_VERSION,
            "command": "simulate",
            "model": scn.model.value,
            "covariance": scn.covariance.value,
            "signal": scn.signal.value,
            "n": scn.n,
            "p": scn.p,
            "sigma_noise": scn.sigma_noise,
            "seed": scn.seed,
            "alpha0": {"positions": scn.alpha0.positions,
                       "values": scn.alpha0.values},
            "beta0": {"positions": scn.beta0.positions,
                      "values": scn.beta0.values},
            "gamma1": {"positions": scn.gamma1.positions,
                       "values": scn.gamma1.values},
            "gamma2": {"positions": scn.gamma2.positions,
                       "values": scn.gamma2.values},
        }, args.truth_out)
    return 0


def _threads_from_args(args) -> int:
    env = os.environ.get(THREADS_ENV)
    cap = None
    if env is not None:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}")
    requested = args.threads if args.threads is not None else (cap or 1)
    if cap is not None:
        requested = min(requested, cap)
    return max(1, requested)


def _cmd_replicate(args) -> int:
    scn = _scenario_from_args(args)
    cfg = parse_config(args.config) if args.config else {}
    config = run_config_from_mapping(cfg)
    mode = config.propensity_mode
    if args.propensity_mode is not None:
        mode = PropensityMode.from_name(args.propensity_mode)
    if mode is PropensityMode.KNOWN:
        raise ValueError("replicate supports logistic or proportion modes")
    threads = _threads_from_args(args)
    summary = run_study(
        scn,
        args.reps,
        penalties=config.penalties,
        opts=config.opts,
        propensity_mode=mode,
        cv_folds=config.cv_folds,
        mc_subjects=args.mc_subjects,
        threads=threads,
    )
    payload = {
        "schema_version": SCHEMA_VERSION,
        "command": "replicate",
        "scenario": {
            "model": scn.model.value,
            "covariance": scn.covariance.value,
            "signal": scn.signal.value,
            "n": scn.n,
            "p": scn.p,
            "sigma_noise": scn.sigma_noise,
            "seed": scn.seed,
        },
        "replications": summary.replications,
        "failures": summary.failures,
        "metrics": {
            "l2_loss_beta": summary.l2_loss_beta,
            "l2_loss_alpha": summary.l2_loss_alpha,
            "fn_beta": summary.fn_beta,
            "fn_alpha": summary.fn_alpha,
            "num_selected_beta": summary.num_selected_beta,
            "num_selected_alpha": summary.num_selected_alpha,
            "pcd": summary.pcd,
            "value_hat_mean": summary.value_hat_mean,
            "value_hat_sd": summary.value_hat_sd,
            "value_opt_mean": summary.value_opt_mean,
            "value_opt_sd": summary.value_opt_sd,
        },
    }
    _emit(payload, args.out)
    if args.csv:
        rows = [
            ("l2_loss", summary.l2_loss_beta, summary.l2_loss_alpha),
            ("fn", summary.fn_beta, summary.fn_alpha),
            ("num_selected", summary.num_selected_beta,
             summary.num_selected_alpha),
            ("pcd", summary.pcd, ""),
            ("value_hat", summary.value_hat_mean, summary.value_hat_sd),
            ("value_opt", summary.value_opt_mean, summary.value_opt_sd),
        ]
        with open(args.csv, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["measure", "beta_or_mean", "alpha_or_sd"])
            for row in rows:
                writer.writerow([row[0], repr(float(row[1])),
                                 repr(float(row[2])) if row[2] != "" else ""])
    if args.strict and summary.failures:
        sys.stderr.write(f"{summary.failures} replicates failed\n")
        return 2
    return 0


def _cmd_deviation(args) -> int:
    try:
        deltas = tuple(float(v) for v in args.deltas.split(","))
    except ValueError:
        raise ValueError(f"--deltas must be comma-separated numbers")
    report = deviation_experiment(
        n=args.n,
        J=args.J,
        S=args.S,
        delta_grid=deltas,
        replicates=args.replicates,
        seed=args.seed,
        lattice_points=args.lattice_points,
        probes=args.probes,
    )
    _emit({
        "schema_version": SCHEMA_VERSION,
        "command": "deviation",
        "delta_grid": report.delta_grid,
        "sup_means": report.sup_means,
        "sup_ses": report.sup_ses,
        "slope": report.slope,
        "constants": report.constants,
        "constant_ratio": report.constant_ratio,
        "bound_constant": report.bound_constant,
        "bound_holds": report.bound_holds,
        "d_n": report.d_n,
        "omega": report.omega,
        "n": report.n,
        "J": report.J,
        "S": report.S,
        "replicates": report.replicates,
    }, args.out)
    return 0


def _cmd_audit_penalty(args) -> int:
    spec = PenaltySpec(args.family, lam=args.lam, shape=args.shape)
    grid = [float(v) for v in args.grid.split(",")]
    result = condition1_audit(spec, grid)
    _emit({
        "schema_version": SCHEMA_VERSION,
        "command": "audit-penalty",
        "family": spec.family.value,
        "lambda": spec.lam,
        "shape": spec.shape,
        "grid": grid,
        "audit": result,
    }, args.out)
    return 0


_COMMANDS = {
    "fit": _cmd_fit,
    "decide": _cmd_decide,
    "value": _cmd_value,
    "simulate": _cmd_simulate,
    "replicate": _cmd_replicate,
    "deviation": _cmd_deviation,
    "audit-penalty": _cmd_audit_penalty,
}


def dispatch(argv: Sequence[str]) -> int:
    """Parse argv and run one subcommand; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(list(argv))
    except argparse.ArgumentError as exc:
        sys.stderr.write(f"{exc}\n")
        parser.print_usage(sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()

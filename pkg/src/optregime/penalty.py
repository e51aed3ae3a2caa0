"""Folded concave penalty families for sparse regression.

Implements the LASSO, SCAD and MCP penalties through one interface:
the penalty value rho(t; lambda), its derivative rho'(t; lambda), and
an audit of the shape properties the estimators rely on (monotone in
t, concave in t, derivative monotone in lambda). All three families
share rho(0) = 0 and rho'(0+) = lambda, which is what the solver uses
as the inclusion threshold for inactive coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "PenaltyFamily",
    "PenaltySpec",
    "penalty_value",
    "penalty_derivative",
    "condition1_audit",
]

DEFAULT_SCAD_SHAPE = 3.7
DEFAULT_MCP_SHAPE = 3.0


class PenaltyFamily(Enum):
    LASSO = "lasso"
    SCAD = "scad"
    MCP = "mcp"

    @classmethod
    def from_name(cls, name: str) -> "PenaltyFamily":
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            valid = ", ".join(f.value for f in cls)
            raise ValueError(
                f"unknown penalty family {name!r}; valid names: {valid}"
            ) from None


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty family with tuning parameters.

    Arguments
    ---------
    family : PenaltyFamily or str
        One of lasso, scad, mcp.
    lam : float or None
        Regularization level lambda >= 0. None marks a spec whose
        lambda is still to be chosen (e.g. by cross-validation);
        evaluating the penalty then raises.
    shape : float or None
        Concavity parameter: a > 2 for SCAD (default 3.7), gamma > 1
        for MCP (default 3.0). Ignored for LASSO.
    """

    family: PenaltyFamily
    lam: float | None = None
    shape: float | None = None

    def __post_init__(self):
        fam = self.family
        if not isinstance(fam, PenaltyFamily):
            object.__setattr__(self, "family", PenaltyFamily.from_name(fam))
            fam = self.family
        if self.lam is not None:
            lam = float(self.lam)
            if not np.isfinite(lam) or lam < 0.0:
                raise ValueError(f"lambda must be finite and >= 0, got {self.lam!r}")
            object.__setattr__(self, "lam", lam)
        if fam is PenaltyFamily.LASSO:
            object.__setattr__(self, "shape", None)
            return
        shape = self.shape
        if shape is None:
            shape = DEFAULT_SCAD_SHAPE if fam is PenaltyFamily.SCAD else DEFAULT_MCP_SHAPE
        shape = float(shape)
        if fam is PenaltyFamily.SCAD and not shape > 2.0:
            raise ValueError(f"SCAD requires shape a > 2, got {shape}")
        if fam is PenaltyFamily.MCP and not shape > 1.0:
            raise ValueError(f"MCP requires shape gamma > 1, got {shape}")
        object.__setattr__(self, "shape", shape)

    def with_lam(self, lam: float) -> "PenaltySpec":
        return PenaltySpec(self.family, lam, self.shape)

    def _resolved(self) -> tuple[float, float]:
        if self.lam is None:
            raise ValueError("penalty lambda is unset; fix it or run cross-validation")
        return self.lam, (self.shape if self.shape is not None else 0.0)


def _check_magnitudes(t) -> np.ndarray:
    arr = np.asarray(t, dtype=float)
    if arr.size and (not np.all(np.isfinite(arr)) or np.any(arr < 0.0)):
        raise ValueError("penalty evaluated at a negative or non-finite magnitude")
    return arr


def penalty_value(spec: PenaltySpec, t) -> float | np.ndarray:
    """Evaluate rho(t; lambda) elementwise for magnitudes t >= 0.

    LASSO: lambda * t.
    SCAD:  lambda * t on [0, lambda]; the quadratic bridge
           (2*a*lambda*t - t^2 - lambda^2) / (2*(a-1)) on (lambda, a*lambda];
           constant lambda^2 * (a+1) / 2 beyond.
    MCP:   lambda * t - t^2 / (2*gamma) on [0, gamma*lambda];
           constant gamma * lambda^2 / 2 beyond.
    """
    lam, shape = spec._resolved()
    arr = _check_magnitudes(t)
    scalar = np.isscalar(t) or getattr(t, "ndim", 1) == 0
    if spec.family is PenaltyFamily.LASSO:
        out = lam * arr
    elif spec.family is PenaltyFamily.SCAD:
        a = shape
        out = np.where(
            arr <= lam,
            lam * arr,
            np.where(
                arr <= a * lam,
                (2.0 * a * lam * arr - arr**2 - lam**2) / (2.0 * (a - 1.0)),
                lam * lam * (a + 1.0) / 2.0,
            ),
        )
    else:  # MCP
        g = shape
        out = np.where(
            arr <= g * lam,
            lam * arr - arr**2 / (2.0 * g),
            g * lam * lam / 2.0,
        )
    return float(out) if scalar else out


def penalty_derivative(spec: PenaltySpec, t) -> float | np.ndarray:
    """Evaluate rho'(t; lambda) elementwise; at t = 0 the right limit.

    All three families return lambda at t = 0, stay nonnegative and
    are nonincreasing in t. SCAD and MCP hit exactly zero at a*lambda
    and gamma*lambda respectively.
    """
    lam, shape = spec._resolved()
    arr = _check_magnitudes(t)
    scalar = np.isscalar(t) or getattr(t, "ndim", 1) == 0
    if spec.family is PenaltyFamily.LASSO:
        out = np.full_like(arr, lam)
    elif spec.family is PenaltyFamily.SCAD:
        a = shape
        out = np.where(
            arr <= lam,
            lam,
            np.maximum(a * lam - arr, 0.0) / (a - 1.0),
        )
    else:  # MCP
        out = np.maximum(lam - arr / shape, 0.0)
    return float(out) if scalar else out


def _monotone_violation(values: np.ndarray, increasing: bool) -> float:
    diffs = np.diff(values)
    bad = -diffs if increasing else diffs
    return float(max(0.0, bad.max())) if bad.size else 0.0


def condition1_audit(spec: PenaltySpec, t_grid) -> dict:
    """Audit the folded-concave shape conditions on a magnitude grid.

    Checks, on the supplied increasing grid of nonnegative magnitudes:
    rho nondecreasing in t, rho' nonincreasing in t (concavity), and
    rho'(t; lambda) nondecreasing in lambda (over multipliers of the
    spec's lambda), plus rho(0) = 0 and rho'(0+) = lambda.

    Returns a dict with one entry per check holding ``ok`` and the
    worst violation magnitude, and an overall ``ok`` flag.
    """
    lam, _ = spec._resolved()
    grid = _check_magnitudes(t_grid).ravel()
    if grid.size < 2 or np.any(np.diff(grid) <= 0.0):
        raise ValueError("audit grid must be increasing with at least two points")

    tol = 1e-12
    full = np.concatenate(([0.0], grid)) if grid[0] > 0.0 else grid
    values = np.asarray(penalty_value(spec, full))
    derivs = np.asarray(penalty_derivative(spec, full))

    checks = {}
    v = _monotone_violation(values, increasing=True)
    checks["value_nondecreasing_in_t"] = {"ok": v <= tol, "worst_violation": v}
    v = _monotone_violation(derivs, increasing=False)
    checks["derivative_nonincreasing_in_t"] = {"ok": v <= tol, "worst_violation": v}

    base = lam if lam > 0.0 else 1.0
    lam_grid = base * np.array([0.25, 0.5, 1.0, 1.5, 2.0])
    per_lam = np.vstack(
        [np.asarray(penalty_derivative(spec.with_lam(l), full)) for l in lam_grid]
    )
    v = max(_monotone_violation(per_lam[:, k], increasing=True) for k in range(full.size))
    checks["derivative_nondecreasing_in_lambda"] = {"ok": v <= tol, "worst_violation": v}

    v = abs(float(values[0])) if full[0] == 0.0 else 0.0
    checks["zero_at_origin"] = {"ok": v <= tol, "worst_violation": v}
    v = abs(float(derivs[0]) - lam) if full[0] == 0.0 else 0.0
    checks["derivative_at_origin_equals_lambda"] = {"ok": v <= tol, "worst_violation": v}

    return {
        "family": spec.family.value,
        "lambda": lam,
        "shape": spec.shape,
        "ok": all(c["ok"] for c in checks.values()),
        "checks": checks,
    }

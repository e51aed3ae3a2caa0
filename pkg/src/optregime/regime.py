"""Two-step estimation of an optimal binary treatment regime.

Step 1 fits nuisance models on the raw design: a penalized logistic
propensity pi(x) = P(A=1 | x) and a penalized least squares working
mean Phi(x) for the response. Step 2 residualizes both out and fits
the treatment contrast beta by penalized least squares on the
transformed design with rows (A_i - pi_i) x_i, so the recommended
treatment for a subject with covariates x is I(beta'x > 0). The
contrast fit is robust to a misspecified working mean as long as the
propensity model is correct, which is why the two nuisances are
estimated separately and each gets its own penalty level.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .penalty import PenaltySpec
from .solver import (
    CvReport,
    DesignMatrix,
    FitResult,
    SolverOptions,
    cross_validate,
    fit_penalized_logistic,
    fit_penalized_ls,
    logistic_problem,
    ls_problem,
)

__all__ = [
    "Dataset",
    "PropensityMode",
    "PhiMode",
    "RegimeEstimate",
    "fit_regime",
    "decide",
    "residualize",
    "PI_CLIP",
]

# propensities are forced into this closed interval before the step-2
# residualization; keeps the (A - pi) weights bounded away from +-1
PI_CLIP = (0.01, 0.99)


class PropensityMode(enum.Enum):
    LOGISTIC = "logistic"
    SAMPLE_PROPORTION = "proportion"
    KNOWN = "known"

    @classmethod
    def from_name(cls, name: str) -> "PropensityMode":
        for mode in cls:
            if mode.value == str(name).lower():
                return mode
        raise ValueError(f"unknown propensity mode {name!r}; "
                         f"expected one of {[m.value for m in cls]}")


class PhiMode(enum.Enum):
    LINEAR = "linear"
    ZERO = "zero"

    @classmethod
    def from_name(cls, name: str) -> "PhiMode":
        for mode in cls:
            if mode.value == str(name).lower():
                return mode
        raise ValueError(f"unknown phi mode {name!r}; "
                         f"expected one of {[m.value for m in cls]}")


@dataclass(frozen=True)
class Dataset:
    """Observed triples (Y, A, X) with a validated design matrix."""

    y: np.ndarray
    a: np.ndarray
    design: DesignMatrix

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64).ravel()
        a = np.asarray(self.a, dtype=np.float64).ravel()
        n = self.design.n
        if y.shape != (n,) or a.shape != (n,):
            raise ValueError(
                f"response and treatment must have length n={n}, "
                f"got {y.shape[0]} and {a.shape[0]}"
            )
        if not np.all(np.isfinite(y)):
            raise ValueError("response contains NaN or Inf")
        if not np.all((a == 0.0) | (a == 1.0)):
            raise ValueError("treatment vector must be binary 0/1")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)

    @property
    def n(self) -> int:
        return self.design.n

    @property
    def p(self) -> int:
        return self.design.p


@dataclass(frozen=True)
class RegimeEstimate:
    """Fitted two-step regime.

    alpha_hat, theta_hat and beta_hat are the propensity, working-mean
    and contrast fits on the design's coordinates. pi_hat is the
    clipped propensity vector actually used in the residualization;
    phi_hat is the fitted working mean. cv_reports holds the per-stage
    cross-validation reports (None for stages with a fixed lambda or a
    synthesized fit).

    For SAMPLE_PROPORTION and KNOWN modes alpha_hat is bookkeeping for
    the reduced model actually solved (an intercept-only likelihood or
    no model at all); pi_hat is the authoritative propensity either way.
    """

    alpha_hat: FitResult
    theta_hat: FitResult
    beta_hat: FitResult
    propensity_mode: PropensityMode
    phi_mode: PhiMode
    pi_hat: np.ndarray
    phi_hat: np.ndarray
    cv_reports: tuple[CvReport | None, CvReport | None, CvReport | None]

    @property
    def converged(self) -> bool:
        return (self.alpha_hat.converged and self.theta_hat.converged
                and self.beta_hat.converged)


def decide(beta, x):
    """Treatment decision I(beta'x > 0) with ties sent to control.

    x may be a single covariate vector or a matrix of rows; returns an
    int for a vector and an int array for a matrix.
    """
    beta = np.asarray(beta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if beta.ndim != 1 or x.ndim not in (1, 2) or x.shape[-1] != beta.shape[0]:
        raise ValueError(
            f"dimension mismatch: beta has length {beta.shape}, x has shape {x.shape}"
        )
    score = x @ beta
    if x.ndim == 1:
        return int(score > 0.0)
    return (score > 0.0).astype(np.int64)


def residualize(data: Dataset, pi_hat, phi_hat):
    """Transform to the step-2 regression: Z_ij = (A_i - pi_i) X_ij and
    r_i = Y_i - phi_i. Z is deliberately not re-standardized; the
    (A - pi) weights are information, not nuisance scale."""
    pi_hat = np.asarray(pi_hat, dtype=np.float64).ravel()
    phi_hat = np.asarray(phi_hat, dtype=np.float64).ravel()
    n = data.n
    if pi_hat.shape != (n,) or phi_hat.shape != (n,):
        raise ValueError(f"pi_hat and phi_hat must have length n={n}")
    z = (data.a - pi_hat)[:, None] * data.design.values
    design = DesignMatrix(
        z, has_intercept=False, standardized=False,
        column_names=data.design.column_names,
    )
    return design, data.y - phi_hat


def _expit(eta):
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _logistic_loss(eta, a):
    return float(np.mean(np.logaddexp(0.0, eta) - a * eta))


def _synthetic_fit(coef, objective) -> FitResult:
    coef = np.asarray(coef, dtype=np.float64).copy()
    coef.flags.writeable = False
    return FitResult(
        coefficients=coef,
        support=np.flatnonzero(coef).astype(np.int64),
        lam=0.0,
        objective=float(objective),
        iterations=0,
        converged=True,
        kkt_residual=0.0,
    )


def _fit_stage(kind, design, target, spec, opts, cv_opts, cv_folds, seed):
    """Cross-validate lambda if the spec leaves it unset, then fit at
    the chosen level with the full-accuracy options."""
    if kind == "logistic":
        problem = logistic_problem(design, target, spec.family, spec.shape)
        fit = fit_penalized_logistic
    else:
        problem = ls_problem(design, target, spec.family, spec.shape)
        fit = fit_penalized_ls
    report = None
    if spec.lam is None:
        report = cross_validate(problem, n_folds=cv_folds, seed=seed, opts=cv_opts)
        spec = spec.with_lam(report.selected_lambda)
    return fit(design, target, spec, opts), report


def fit_regime(
    data: Dataset,
    penalties,
    opts: SolverOptions | None = None,
    propensity_mode: PropensityMode = PropensityMode.LOGISTIC,
    phi_mode: PhiMode = PhiMode.LINEAR,
    known_propensity=None,
    cv_folds: int = 10,
    seed: int = 0,
    cv_tolerance: float = 1e-5,
) -> RegimeEstimate:
    """Run the two-step pipeline and return the fitted regime.

    penalties is one PenaltySpec shared by all stages or a sequence of
    three (propensity, working mean, contrast order); any spec with
    lam=None gets its own cross-validated level on that stage's
    problem. Fold assignments derive deterministically from seed.
    Fold fits run at cv_tolerance (selection does not need full
    accuracy); the returned fits use opts.tolerance.
    """
    opts = opts or SolverOptions()
    spec_a, spec_t, spec_b = _three_specs(penalties)
    cv_opts = replace(opts, tolerance=max(opts.tolerance, cv_tolerance))
    seeds = [int(s) for s in np.random.SeedSequence(seed).generate_state(3)]
    x = data.design.values
    reports: list[CvReport | None] = [None, None, None]

    if propensity_mode is PropensityMode.LOGISTIC:
        alpha_hat, reports[0] = _fit_stage(
            "logistic", data.design, data.a, spec_a, opts, cv_opts, cv_folds, seeds[0]
        )
        pi_raw = _expit(x @ alpha_hat.coefficients)
    elif propensity_mode is PropensityMode.SAMPLE_PROPORTION:
        abar = float(np.clip(np.mean(data.a), *PI_CLIP))
        coef = np.zeros(data.p)
        if data.design.has_intercept:
            coef[0] = np.log(abar / (1.0 - abar))
        alpha_hat = _synthetic_fit(coef, _logistic_loss(x @ coef, data.a))
        pi_raw = np.full(data.n, abar)
    elif propensity_mode is PropensityMode.KNOWN:
        if known_propensity is None:
            raise ValueError("propensity_mode=KNOWN requires known_propensity")
        pi_raw = np.asarray(known_propensity, dtype=np.float64)
        if pi_raw.ndim == 0:
            pi_raw = np.full(data.n, float(pi_raw))
        else:
            pi_raw = pi_raw.ravel()
        if pi_raw.shape != (data.n,):
            raise ValueError(f"known_propensity must have length n={data.n}")
        if not np.all((pi_raw > 0.0) & (pi_raw < 1.0)):
            raise ValueError("known propensities must lie strictly inside (0, 1)")
        coef = np.zeros(data.p)
        alpha_hat = _synthetic_fit(coef, _logistic_loss(x @ coef, data.a))
    else:
        raise ValueError(f"unknown propensity mode {propensity_mode!r}")

    if phi_mode is PhiMode.LINEAR:
        theta_hat, reports[1] = _fit_stage(
            "ls", data.design, data.y, spec_t, opts, cv_opts, cv_folds, seeds[1]
        )
    elif phi_mode is PhiMode.ZERO:
        theta_hat = _synthetic_fit(np.zeros(data.p), float(np.mean(data.y ** 2)))
    else:
        raise ValueError(f"unknown phi mode {phi_mode!r}")
    phi_hat = x @ theta_hat.coefficients

    pi_hat = np.clip(pi_raw, *PI_CLIP)
    z_design, resid = residualize(data, pi_hat, phi_hat)
    beta_hat, reports[2] = _fit_stage(
        "ls", z_design, resid, spec_b, opts, cv_opts, cv_folds, seeds[2]
    )

    pi_hat = pi_hat.copy()
    pi_hat.flags.writeable = False
    phi_hat = phi_hat.copy()
    phi_hat.flags.writeable = False
    return RegimeEstimate(
        alpha_hat=alpha_hat,
        theta_hat=theta_hat,
        beta_hat=beta_hat,
        propensity_mode=propensity_mode,
        phi_mode=phi_mode,
        pi_hat=pi_hat,
        phi_hat=phi_hat,
        cv_reports=tuple(reports),
    )


def _three_specs(penalties):
    if isinstance(penalties, PenaltySpec):
        return penalties, penalties, penalties
    specs = tuple(penalties)
    if len(specs) != 3 or not all(isinstance(s, PenaltySpec) for s in specs):
        raise ValueError(
            "penalties must be a PenaltySpec or a sequence of three "
            "(propensity, working mean, contrast)"
        )
    return specs

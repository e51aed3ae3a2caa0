"""Value estimation and plug-in variance for a fitted treatment regime.

The value of a linear rule I(x'b > 0) is estimated by the augmented mean

    v_hat = (1/n) sum_i [y_i + x_i'b {I(x_i'b > 0) - a_i}],

whose large-sample variance decomposes into a noise term, a term from the
uncertainty in b restricted to its support, and a term driven by the working
mean's misspecification, the last one shrunk by projecting out the directions
already explained by the propensity-model support.  All matrix blocks are
plug-in versions built from the fitted regime:

    Delta = diag(pi_hat_i (1 - pi_hat_i))         logistic information
    W     = diag(pi_hat_i * x_i'b)                model-based mean gap
    B_S   = X_S' Delta X_S                        weighted Gram on support S

Inverse square roots use a symmetric eigendecomposition; an eigenvalue at or
below ``EIG_FLOOR`` relative to the largest marks the block singular, which is
reported as the support being too large for the sample size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .regime import Dataset, PropensityMode, RegimeEstimate

__all__ = [
    "CovarianceBlocks",
    "ValueEstimate",
    "VarianceComponents",
    "Z_975",
    "compute_sigma22",
    "estimate_sigma2",
    "estimate_value",
    "value_report",
    "value_variance",
]

Z_975 = 1.959963984540054
EIG_FLOOR = 1e-10


@dataclass(frozen=True)
class VarianceComponents:
    """The three summands of the plug-in variance."""

    sigma2_hat: float
    term_main: float
    term_beta: float
    term_sigma22: float


@dataclass(frozen=True)
class ValueEstimate:
    """Estimated regime value with variance, CI, and its breakdown."""

    v_hat: float
    variance: float
    ci_lower: float
    ci_upper: float
    components: VarianceComponents


@dataclass(frozen=True)
class CovarianceBlocks:
    """Support-restricted plug-in covariance blocks for the fitted regime."""

    B_n_alpha: np.ndarray
    B_n_beta: np.ndarray
    Sigma22: np.ndarray
    W_diag: np.ndarray
    Delta_diag: np.ndarray

    def __post_init__(self) -> None:
        for field in ("B_n_alpha", "B_n_beta", "Sigma22", "W_diag", "Delta_diag"):
            arr = np.asarray(getattr(self, field), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, field, arr)


def _check_regime(data: Dataset, regime: RegimeEstimate) -> np.ndarray:
    beta = regime.beta_hat.coefficients
    if beta.shape[0] != data.design.p:
        raise ValueError(
            f"regime has {beta.shape[0]} coefficients but the design has "
            f"{data.design.p} columns"
        )
    return beta


def estimate_value(data: Dataset, regime: RegimeEstimate) -> float:
    """Augmented estimate of the mean response under the fitted rule."""
    beta = _check_regime(data, regime)
    scores = data.design.values @ beta
    decisions = (scores > 0.0).astype(float)
    return float(np.mean(data.y + scores * (decisions - data.a)))


def _default_support_beta(regime: RegimeEstimate) -> np.ndarray:
    return np.flatnonzero(regime.beta_hat.coefficients != 0.0)


def _default_support_alpha(data: Dataset, regime: RegimeEstimate) -> np.ndarray:
    support = np.flatnonzero(regime.alpha_hat.coefficients != 0.0)
    if data.design.has_intercept:
        # The propensity intercept is unpenalized, hence always estimated.
        support = np.union1d(support, [0])
    return support.astype(np.intp)


def _inv_sqrt(matrix: np.ndarray, what: str) -> np.ndarray:
    evals, evecs = np.linalg.eigh(matrix)
    if evals[0] <= EIG_FLOOR * max(1.0, float(evals[-1])):
        raise ValueError(
            f"{what} is numerically singular: the selected support is too "
            "large for n; refit with a stronger penalty or more data"
        )
    return (evecs / np.sqrt(evals)) @ evecs.T


def _inv_apply(matrix: np.ndarray, vec: np.ndarray, what: str) -> np.ndarray:
    half = _inv_sqrt(matrix, what)
    return half @ (half @ vec)


def _projector_factor(columns: np.ndarray) -> np.ndarray:
    """Orthonormal basis of col(columns); projector is Q Q'."""
    u, s, _ = np.linalg.svd(columns, full_matrices=False)
    keep = s > max(1.0, float(s[0]) if s.size else 1.0) * 1e-12
    return u[:, keep]


def compute_sigma22(
    data: Dataset,
    regime: RegimeEstimate,
    support_alpha: np.ndarray | None = None,
    support_beta: np.ndarray | None = None,
    project: bool = True,
    w_diag: np.ndarray | None = None,
) -> CovarianceBlocks:
    """Support-restricted covariance blocks of the contrast estimator.

    With ``project=True`` the misspecification block is
    B^{-1/2} X_b' W D^{1/2} (I - P) D^{1/2} W X_b B^{-1/2} where P projects
    onto col(D^{1/2} X_a); with ``project=False`` the projection is dropped,
    which is the right block when the propensity is known rather than fitted.
    ``w_diag`` overrides the model-based plug-in pi_hat * x'b for the diagonal
    of W (diag of the working-mean gap).
    """
    beta = _check_regime(data, regime)
    if support_beta is None:
        support_beta = _default_support_beta(regime)
    support_beta = np.asarray(support_beta, dtype=np.intp)
    if support_beta.size == 0:
        raise ValueError("support of the contrast coefficients is empty")
    if support_alpha is None:
        support_alpha = _default_support_alpha(data, regime)
    support_alpha = np.asarray(support_alpha, dtype=np.intp)
    if project and support_alpha.size == 0:
        raise ValueError("support of the propensity coefficients is empty")

    X = data.design.values
    pi = regime.pi_hat
    delta = pi * (1.0 - pi)
    if w_diag is None:
        w_diag = pi * (X @ beta)
    else:
        w_diag = np.asarray(w_diag, dtype=float)
        if w_diag.shape != pi.shape:
            raise ValueError("w_diag must have one entry per observation")

    X1b = X[:, support_beta]
    X1a = X[:, support_alpha]
    B_alpha = X1a.T @ (delta[:, None] * X1a)
    B_beta = X1b.T @ (delta[:, None] * X1b)
    b_inv_half = _inv_sqrt(B_beta, "B_n_beta")

    root = np.sqrt(delta)
    damped = (root * w_diag)[:, None] * X1b
    if project:
        q = _projector_factor(root[:, None] * X1a)
        damped = damped - q @ (q.T @ damped)
    core = damped.T @ damped
    sigma22 = b_inv_half @ core @ b_inv_half
    sigma22 = 0.5 * (sigma22 + sigma22.T)
    return CovarianceBlocks(
        B_n_alpha=B_alpha,
        B_n_beta=B_beta,
        Sigma22=sigma22,
        W_diag=w_diag,
        Delta_diag=delta,
    )


def estimate_sigma2(data: Dataset, regime: RegimeEstimate) -> float:
    """Residual-variance plug-in with support size as degrees of freedom."""
    beta = _check_regime(data, regime)
    theta = regime.theta_hat.coefficients
    scores = data.design.values @ beta
    resid = data.y - regime.phi_hat - (data.a - regime.pi_hat) * scores
    df = data.n - int(np.count_nonzero(beta)) - int(np.count_nonzero(theta))
    df = max(df, 1)
    return max(float(resid @ resid) / df, 0.0)


def value_variance(
    data: Dataset,
    regime: RegimeEstimate,
    blocks: CovarianceBlocks,
    sigma2_hat: float,
    support_beta: np.ndarray | None = None,
) -> ValueEstimate:
    """Three-term plug-in variance of v_hat and its 95% confidence interval.

    variance = s2 + s2 u' B^{-1} u + (B^{-1/2} u)' Sigma22 (B^{-1/2} u)
    with u = X_b' v_n and v_n,i = [I(x_i'b > 0) - pi_hat_i] / sqrt(n).
    The interval is v_hat +/- z975 sqrt(variance / n).
    """
    if sigma2_hat < 0.0:
        raise ValueError("sigma2_hat must be nonnegative")
    beta = _check_regime(data, regime)
    if support_beta is None:
        support_beta = _default_support_beta(regime)
    support_beta = np.asarray(support_beta, dtype=np.intp)

    n = data.n
    scores = data.design.values @ beta
    v_n = ((scores > 0.0).astype(float) - regime.pi_hat) / np.sqrt(n)
    u = data.design.values[:, support_beta].T @ v_n

    if u.size == 0 or not np.any(u):
        term_beta = 0.0
        term_s22 = 0.0
    else:
        inv_u = _inv_apply(blocks.B_n_beta, u, "B_n_beta")
        term_beta = sigma2_hat * float(u @ inv_u)
        half_u = _inv_sqrt(blocks.B_n_beta, "B_n_beta") @ u
        term_s22 = float(half_u @ blocks.Sigma22 @ half_u)

    components = VarianceComponents(
        sigma2_hat=float(sigma2_hat),
        term_main=float(sigma2_hat),
        term_beta=term_beta,
        term_sigma22=term_s22,
    )
    variance = components.term_main + components.term_beta + components.term_sigma22
    v_hat = estimate_value(data, regime)
    width = Z_975 * np.sqrt(variance / n)
    return ValueEstimate(
        v_hat=v_hat,
        variance=variance,
        ci_lower=v_hat - width,
        ci_upper=v_hat + width,
        components=components,
    )


def value_report(
    data: Dataset,
    regime: RegimeEstimate,
    sigma2_hat: float | None = None,
    support_alpha: np.ndarray | None = None,
    support_beta: np.ndarray | None = None,
) -> ValueEstimate:
    """End-to-end value estimate: plug-ins, blocks, variance, interval.

    A known propensity skips the projection (no propensity model was fitted);
    an empty contrast support, or a rule that reproduces pi_hat exactly,
    degenerates to the noise-only variance.
    """
    beta = _check_regime(data, regime)
    if sigma2_hat is None:
        sigma2_hat = estimate_sigma2(data, regime)
    if support_beta is None:
        support_beta = _default_support_beta(regime)
    support_beta = np.asarray(support_beta, dtype=np.intp)

    scores = data.design.values @ beta
    v_n = (scores > 0.0).astype(float) - regime.pi_hat
    if support_beta.size == 0 or not np.any(v_n):
        v_hat = estimate_value(data, regime)
        width = Z_975 * np.sqrt(sigma2_hat / data.n)
        components = VarianceComponents(
            sigma2_hat=float(sigma2_hat),
            term_main=float(sigma2_hat),
            term_beta=0.0,
            term_sigma22=0.0,
        )
        return ValueEstimate(
            v_hat=v_hat,
            variance=float(sigma2_hat),
            ci_lower=v_hat - width,
            ci_upper=v_hat + width,
            components=components,
        )

    project = regime.propensity_mode is not PropensityMode.KNOWN
    blocks = compute_sigma22(
        data,
        regime,
        support_alpha=support_alpha,
        support_beta=support_beta,
        project=project,
    )
    return value_variance(data, regime, blocks, sigma2_hat, support_beta=support_beta)

"""Synthetic study harness: generators, metrics, replication, scaling check.

Three generative models share the same treatment mechanism (a logistic
propensity on a small set of covariates) and contrast (a sparse linear
rule); they differ in the baseline mean, which is linear, bilinear, or
smooth nonlinear.  The harness fits the two-step regime on each replicate,
scores support recovery and decision accuracy against the ground truth,
and evaluates realized mean response by fresh Monte-Carlo draws.

Replicate randomness is derived by spawning one child seed sequence per
replicate from the master seed, so results are bit-identical no matter
how replicates are scheduled.

The deviation experiment estimates E sup ||{A(h1) - A(h2)}' z||_inf for
the linear family a_ij(h) = x_ij (x_i' h) over a hypercube of h values,
approximated with a fixed lattice per axis plus random interior probes,
and compares against the theoretical rate delta sqrt(S log J) d_n w log n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .penalty import PenaltySpec
from .regime import Dataset, PropensityMode, RegimeEstimate, fit_regime
from .solver import DesignMatrix, SolverOptions

__all__ = [
    "AR1_RHO",
    "Covariance",
    "DeviationReport",
    "GroundTruth",
    "MetricsSummary",
    "Model",
    "Signal",
    "SimulationScenario",
    "compute_metrics",
    "deviation_experiment",
    "generate_dataset",
    "monte_carlo_value",
    "psi1_norm_gaussian",
    "run_study",
]

AR1_RHO = 0.3

ALPHA_VALUES = (1.5, -1.0, 1.4, 0.8, -1.2)
BETA_MODERATE = (0.8, -0.5, -0.6, 1.0, -0.6)
BETA_LARGE = (2.0, -1.3, 1.5, -1.2, 1.0)
GAMMA1_VALUES = (0.5, -0.5, 0.5, -0.5, 0.5)
GAMMA2_VALUES = (-0.5, 0.5, -0.5, 0.5, -0.5)

ALPHA_POSITIONS_IID = (1, 2, 3, 4, 5)
BETA_POSITIONS_IID = (1, 2, 6, 7, 8)
GAMMA_POSITIONS_IID = (9, 10, 11, 12, 13)
ALPHA_POSITIONS_AR1 = (1, 2, 9, 10, 50)
BETA_POSITIONS_AR1 = (1, 2, 15, 16, 100)
# Baseline covariates are kept disjoint from, and under AR(1) well
# separated from, the propensity and contrast supports (0.3^4 < 0.01).
GAMMA_POSITIONS_AR1 = (20, 26, 32, 38, 44)


class Model(Enum):
    I = "I"
    II = "II"
    III = "III"

    @classmethod
    def from_name(cls, name: str) -> "Model":
        try:
            return cls[str(name).strip().upper()]
        except KeyError:
            raise ValueError(f"unknown model {name!r}; expected I, II or III")


class Covariance(Enum):
    IID = "iid"
    AR1 = "ar1"

    @classmethod
    def from_name(cls, name: str) -> "Covariance":
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            raise ValueError(f"unknown covariance {name!r}; expected iid or ar1")


class Signal(Enum):
    MODERATE = "moderate"
    LARGE = "large"

    @classmethod
    def from_name(cls, name: str) -> "Signal":
        try:
            return cls(str(name).strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown signal {name!r}; expected moderate or large")


@dataclass(frozen=True)
class SparseCoef:
    """Sparse vector as 1-based covariate positions with values.

    Position k refers to covariate x_k, which is design column k when an
    intercept column is prepended at column 0.
    """

    positions: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        positions = tuple(int(k) for k in self.positions)
        values = tuple(float(v) for v in self.values)
        if len(positions) != len(values):
            raise ValueError("positions and values must have equal length")
        if any(k < 1 for k in positions):
            raise ValueError("positions are 1-based covariate indices")
        if len(set(positions)) != len(positions):
            raise ValueError("positions must be distinct")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "values", values)

    def dense(self, p: int) -> np.ndarray:
        """Dense design-coordinate vector of length p+1 (intercept at 0)."""
        if self.positions and max(self.positions) > p:
            raise ValueError(
                f"position {max(self.positions)} exceeds p={p} covariates")
        out = np.zeros(p + 1)
        for k, v in zip(self.positions, self.values):
            out[k] = v
        return out


def _default_alpha(covariance: Covariance) -> SparseCoef:
    pos = (ALPHA_POSITIONS_IID if covariance is Covariance.IID
           else ALPHA_POSITIONS_AR1)
    return SparseCoef(pos, ALPHA_VALUES)


def _default_beta(covariance: Covariance, signal: Signal) -> SparseCoef:
    pos = (BETA_POSITIONS_IID if covariance is Covariance.IID
           else BETA_POSITIONS_AR1)
    vals = BETA_MODERATE if signal is Signal.MODERATE else BETA_LARGE
    return SparseCoef(pos, vals)


def _default_gamma(covariance: Covariance, which: int) -> SparseCoef:
    pos = (GAMMA_POSITIONS_IID if covariance is Covariance.IID
           else GAMMA_POSITIONS_AR1)
    vals = GAMMA1_VALUES if which == 1 else GAMMA2_VALUES
    return SparseCoef(pos, vals)


@dataclass(frozen=True)
class SimulationScenario:
    """Complete description of one synthetic data-generating process."""

    model: Model = Model.I
    n: int = 400
    p: int = 1000
    covariance: Covariance = Covariance.IID
    signal: Signal = Signal.MODERATE
    alpha0: SparseCoef | None = None
    beta0: SparseCoef | None = None
    gamma1: SparseCoef | None = None
    gamma2: SparseCoef | None = None
    sigma_noise: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.p < 1:
            raise ValueError("p must be positive")
        if self.sigma_noise <= 0.0:
            raise ValueError("sigma_noise must be positive")
        if self.alpha0 is None:
            object.__setattr__(self, "alpha0", _default_alpha(self.covariance))
        if self.beta0 is None:
            object.__setattr__(
                self, "beta0", _default_beta(self.covariance, self.signal))
        if self.gamma1 is None:
            object.__setattr__(self, "gamma1", _default_gamma(self.covariance, 1))
        if self.gamma2 is None:
            object.__setattr__(self, "gamma2", _default_gamma(self.covariance, 2))
        for name in ("alpha0", "beta0", "gamma1", "gamma2"):
            coef: SparseCoef = getattr(self, name)
            if coef.positions and max(coef.positions) > self.p:
                raise ValueError(
                    f"{name} position {max(coef.positions)} exceeds p={self.p}")


@dataclass(frozen=True)
class GroundTruth:
    """Dense generative parameters in design coordinates (intercept col 0)."""

    model: Model
    covariance: Covariance
    sigma_noise: float
    alpha: np.ndarray
    beta: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "gamma1", "gamma2"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def p(self) -> int:
        return self.alpha.shape[0] - 1

    def baseline(self, design: np.ndarray) -> np.ndarray:
        """h0 evaluated on design rows (intercept column included)."""
        g1 = design @ self.gamma1
        g2 = design @ self.gamma2
        if self.model is Model.I:
            return 1.0 + g1
        if self.model is Model.II:
            return 1.0 + 0.5 * g1 * g2
        return 1.0 + 0.5 * np.sin(np.pi * g1) + 0.25 * (1.0 + g2) ** 2

    def optimal_rule(self, design: np.ndarray) -> np.ndarray:
        return (design @ self.beta > 0.0).astype(float)


def _draw_covariates(rng: np.random.Generator, n: int, p: int,
                     covariance: Covariance) -> np.ndarray:
    shocks = rng.standard_normal((n, p))
    if covariance is Covariance.IID:
        return shocks
    X = np.empty((n, p))
    X[:, 0] = shocks[:, 0]
    scale = math.sqrt(1.0 - AR1_RHO**2)
    for j in range(1, p):
        X[:, j] = AR1_RHO * X[:, j - 1] + scale * shocks[:, j]
    return X


def _generate(scn: SimulationScenario,
              rng: np.random.Generator) -> tuple[Dataset, GroundTruth]:
    truth = GroundTruth(
        model=scn.model,
        covariance=scn.covariance,
        sigma_noise=scn.sigma_noise,
        alpha=scn.alpha0.dense(scn.p),
        beta=scn.beta0.dense(scn.p),
        gamma1=scn.gamma1.dense(scn.p),
        gamma2=scn.gamma2.dense(scn.p),
    )
    X = _draw_covariates(rng, scn.n, scn.p, scn.covariance)
    design = np.hstack([np.ones((scn.n, 1)), X])
    pi = 1.0 / (1.0 + np.exp(-(design @ truth.alpha)))
    a = (rng.random(scn.n) < pi).astype(float)
    eps = scn.sigma_noise * rng.standard_normal(scn.n)
    y = truth.baseline(design) + a * (design @ truth.beta) + eps
    data = Dataset(y, a, DesignMatrix(design, has_intercept=True))
    return data, truth


def generate_dataset(scn: SimulationScenario) -> tuple[Dataset, GroundTruth]:
    """One dataset drawn deterministically from the scenario seed."""
    rng = np.random.default_rng(np.random.SeedSequence(scn.seed))
    return _generate(scn, rng)


@dataclass(frozen=True)
class MetricsSummary:
    """Aggregated study metrics; single-replicate summaries carry zero in
    the value fields until a Monte-Carlo evaluation fills them."""

    l2_loss_beta: float
    l2_loss_alpha: float
    fn_beta: float
    fn_alpha: float
    num_selected_beta: float
    num_selected_alpha: float
    pcd: float
    value_hat_mean: float = 0.0
    value_hat_sd: float = 0.0
    value_opt_mean: float = 0.0
    value_opt_sd: float = 0.0
    replications: int = 1
    failures: int = 0


def _support_counts(coef: np.ndarray, truth_coef: np.ndarray,
                    has_intercept: bool) -> tuple[int, int]:
    start = 1 if has_intercept else 0
    fn = int(np.sum((truth_coef[start:] != 0.0) & (coef[start:] == 0.0)))
    selected = int(np.count_nonzero(coef[start:]))
    return fn, selected


def compute_metrics(estimate: RegimeEstimate, truth: GroundTruth,
                    X_eval: np.ndarray) -> MetricsSummary:
    """Support-recovery and decision metrics for one fitted replicate."""
    beta_hat = estimate.beta_hat.coefficients
    alpha_hat = estimate.alpha_hat.coefficients
    fn_b, sel_b = _support_counts(beta_hat, truth.beta, True)
    fn_a, sel_a = _support_counts(alpha_hat, truth.alpha, True)
    agree = (X_eval @ beta_hat > 0.0) == (X_eval @ truth.beta > 0.0)
    return MetricsSummary(
        l2_loss_beta=float(np.linalg.norm(beta_hat - truth.beta)),
        l2_loss_alpha=float(np.linalg.norm(alpha_hat - truth.alpha)),
        fn_beta=float(fn_b),
        fn_alpha=float(fn_a),
        num_selected_beta=float(sel_b),
        num_selected_alpha=float(sel_a),
        pcd=float(np.mean(agree)),
        replications=1,
    )


def monte_carlo_value(
    decision: Callable[[np.ndarray], np.ndarray],
    truth: GroundTruth,
    m: int = 10000,
    seed: int | np.random.SeedSequence = 0,
) -> tuple[float, float]:
    """Mean and sd of the response over m fresh subjects treated per rule."""
    if m < 1:
        raise ValueError("m must be at least 1")
    rng = np.random.default_rng(seed)
    X = _draw_covariates(rng, m, truth.p, truth.covariance)
    design = np.hstack([np.ones((m, 1)), X])
    a = np.asarray(decision(design), dtype=float)
    if a.shape != (m,):
        raise ValueError("decision must return one 0/1 value per row")
    y = (truth.baseline(design) + a * (design @ truth.beta)
         + truth.sigma_noise * rng.standard_normal(m))
    return float(y.mean()), float(y.std(ddof=1))


def _replicate_once(
    scn: SimulationScenario,
    child: np.random.SeedSequence,
    penalties,
    opts: SolverOptions | None,
    propensity_mode: PropensityMode,
    cv_folds: int,
    mc_subjects: int,
) -> MetricsSummary:
    data_seq, fit_seq, mc_seq = child.spawn(3)
    data, truth = _generate(scn, np.random.default_rng(data_seq))
    fit_seed = int(fit_seq.generate_state(1)[0])
    estimate = fit_regime(
        data,
        penalties,
        opts=opts,
        propensity_mode=propensity_mode,
        cv_folds=cv_folds,
        seed=fit_seed,
    )
    metrics = compute_metrics(estimate, truth, data.design.values)
    beta_hat = estimate.beta_hat.coefficients
    mc_hat, mc_opt = mc_seq.spawn(2)
    v_hat, _ = monte_carlo_value(
        lambda d: (d @ beta_hat > 0.0).astype(float), truth,
        m=mc_subjects, seed=mc_hat)
    v_opt, _ = monte_carlo_value(truth.optimal_rule, truth,
                                 m=mc_subjects, seed=mc_opt)
    return replace(metrics, value_hat_mean=v_hat, value_opt_mean=v_opt)


def run_study(
    scn: SimulationScenario,
    replications: int,
    penalties: PenaltySpec | Sequence[PenaltySpec] = PenaltySpec("scad"),
    opts: SolverOptions | None = None,
    propensity_mode: PropensityMode = PropensityMode.LOGISTIC,
    cv_folds: int = 10,
    mc_subjects: int = 10000,
    threads: int = 1,
) -> MetricsSummary:
    """Replicated study with per-replicate derived seeds.

    Results are aggregated by replicate index, so any execution schedule
    (sequential or thread pool) produces identical output.  A replicate
    that raises is counted in ``failures`` and excluded from the means.
    """
    if replications < 1:
        raise ValueError("replications must be at least 1")
    children = np.random.SeedSequence(scn.seed).spawn(replications)

    def job(idx: int) -> MetricsSummary:
        return _replicate_once(scn, children[idx], penalties, opts,
                               propensity_mode, cv_folds, mc_subjects)

    results: dict[int, MetricsSummary] = {}
    failures = 0
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {idx: pool.submit(job, idx) for idx in range(replications)}
        for idx in range(replications):
            try:
                results[idx] = futures[idx].result()
            except Exception:
                failures += 1
    else:
        for idx in range(replications):
            try:
                results[idx] = job(idx)
            except Exception:
                failures += 1

    if not results:
        raise RuntimeError(f"all {replications} replicates failed")
    ordered = [results[idx] for idx in sorted(results)]

    def mean(attr: str) -> float:
        return float(np.mean([getattr(m, attr) for m in ordered]))

    def sd(attr: str) -> float:
        vals = [getattr(m, attr) for m in ordered]
        return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0

    return MetricsSummary(
        l2_loss_beta=mean("l2_loss_beta"),
        l2_loss_alpha=mean("l2_loss_alpha"),
        fn_beta=mean("fn_beta"),
        fn_alpha=mean("fn_alpha"),
        num_selected_beta=mean("num_selected_beta"),
        num_selected_alpha=mean("num_selected_alpha"),
        pcd=mean("pcd"),
        value_hat_mean=mean("value_hat_mean"),
        value_hat_sd=sd("value_hat_mean"),
        value_opt_mean=mean("value_opt_mean"),
        value_opt_sd=sd("value_opt_mean"),
        replications=len(ordered),
        failures=failures,
    )


def psi1_norm_gaussian() -> float:
    """Orlicz psi_1 norm of a standard normal, by bisection.

    The norm is the smallest c with E exp(|Z|/c) = 2, equivalently the
    reciprocal of the t solving exp(t^2/2) Phi(t) = 1 with Phi the
    standard normal distribution function.
    """

    def excess(t: float) -> float:
        phi = 0.5 * (1.0 + math.erf(t / math.sqrt(2.0)))
        return math.exp(0.5 * t * t) * phi - 1.0

    lo, hi = 1e-9, 5.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 1.0 / (0.5 * (lo + hi))


@dataclass(frozen=True)
class DeviationReport:
    """Scaling summary of the empirical-process supremum experiment."""

    delta_grid: tuple[float, ...]
    sup_means: tuple[float, ...]
    sup_ses: tuple[float, ...]
    slope: float
    constants: tuple[float, ...]
    constant_ratio: float
    bound_constant: float
    bound_holds: bool
    d_n: float
    omega: float
    n: int
    J: int
    S: int
    replicates: int
    seed: int = field(default=0)


def _hypercube_points(S: int, lattice_points: int, probes: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Unit-diameter hypercube [-1/2, 1/2]^S: full lattice plus probes."""
    if lattice_points < 3:
        raise ValueError("lattice needs at least 3 points per axis")
    if lattice_points**S > 100_000:
        raise ValueError("S is too large for a full lattice; reduce S")
    axis = np.linspace(-0.5, 0.5, lattice_points)
    mesh = np.meshgrid(*([axis] * S), indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    if probes > 0:
        points = np.vstack([points, rng.uniform(-0.5, 0.5, size=(probes, S))])
    return points


def _pair_differences(points: np.ndarray) -> np.ndarray:
    idx_a, idx_b = np.triu_indices(points.shape[0], k=1)
    return points[idx_a] - points[idx_b]


def _sup_deviation(X: np.ndarray, z: np.ndarray, S: int, delta: float,
                   diffs_unit: np.ndarray) -> float:
    """Estimated sup over pairs in the delta-diameter hypercube.

    For the linear family, {A(h1) - A(h2)}' z has j-th entry
    (h1 - h2)' X_S' diag(z) x^j, so the supremum over evaluated pairs is
    a max of absolute dot products with the pair differences.
    """
    C = X[:, :S].T @ (z[:, None] * X)
    M = (delta * diffs_unit) @ C
    return float(np.abs(M).max()) if M.size else 0.0


def deviation_experiment(
    n: int = 500,
    J: int = 200,
    S: int = 3,
    delta_grid: Sequence[float] = (0.05, 0.1, 0.2, 0.4),
    replicates: int = 200,
    seed: int = 0,
    lattice_points: int = 5,
    probes: int = 32,
) -> DeviationReport:
    """Monte-Carlo scaling of the supremum deviation against delta.

    The design is drawn once; each replicate redraws the noise vector
    independently per delta.  Reported constants are
    sup_mean / (delta sqrt(S log J) d_n omega log n); the fitted bound
    constant is their maximum, for which the bound holds on the grid.
    """
    deltas = [float(d) for d in delta_grid]
    if any(d < 0.0 for d in deltas):
        raise ValueError("delta values must be nonnegative")
    if S > J:
        raise ValueError("S cannot exceed J")
    root = np.random.SeedSequence(seed)
    design_seq, probe_seq, noise_seq = root.spawn(3)
    rng_design = np.random.default_rng(design_seq)
    X = rng_design.standard_normal((n, J))
    diffs_unit = _pair_differences(
        _hypercube_points(S, lattice_points, probes,
                          np.random.default_rng(probe_seq)))

    d_n = float(max(
        np.linalg.norm(X[:, :S] * X[:, [j]], axis=0).sum() for j in range(J)))
    omega = psi1_norm_gaussian()

    rng_noise = np.random.default_rng(noise_seq)
    sups = np.empty((len(deltas), replicates))
    for k, delta in enumerate(deltas):
        for r in range(replicates):
            z = rng_noise.standard_normal(n)
            sups[k, r] = _sup_deviation(X, z, S, delta, diffs_unit)
    sup_means = sups.mean(axis=1)
    sup_ses = sups.std(axis=1, ddof=1) / math.sqrt(replicates)

    rate = np.array([
        d * math.sqrt(S * math.log(J)) * d_n * omega * math.log(n)
        for d in deltas
    ])
    positive = [k for k, d in enumerate(deltas) if d > 0.0 and sup_means[k] > 0.0]
    if len(positive) >= 2:
        logs_d = np.log([deltas[k] for k in positive])
        logs_s = np.log(sup_means[positive])
        slope = float(np.polyfit(logs_d, logs_s, 1)[0])
    else:
        slope = float("nan")
    constants = [
        float(sup_means[k] / rate[k]) if rate[k] > 0.0 else 0.0
        for k in range(len(deltas))
    ]
    nonzero = [c for c in constants if c > 0.0]
    ratio = float(max(nonzero) / min(nonzero)) if nonzero else 1.0
    bound_c = max(nonzero) if nonzero else 0.0
    bound_holds = all(
        sup_means[k] <= bound_c * rate[k] + 1e-12 for k in range(len(deltas)))
    return DeviationReport(
        delta_grid=tuple(deltas),
        sup_means=tuple(float(v) for v in sup_means),
        sup_ses=tuple(float(v) for v in sup_ses),
        slope=slope,
        constants=tuple(constants),
        constant_ratio=ratio,
        bound_constant=float(bound_c),
        bound_holds=bool(bound_holds),
        d_n=d_n,
        omega=float(omega),
        n=n,
        J=J,
        S=S,
        replicates=replicates,
        seed=seed,
    )

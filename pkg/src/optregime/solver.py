"""Coordinate descent solvers for penalized regression.

Least squares and logistic losses with LASSO, SCAD and MCP penalties.
The losses are averaged over observations,

    ls:       (1/n) sum_i w_i (y_i - x_i'b)^2
    logistic: (1/n) sum_i [log(1 + exp(x_i'b)) - y_i x_i'b]

and the penalty sum_j rho(|b_j|; lambda) is added over the penalized
coordinates. Nonconvex penalties are handled by local linear
approximation: starting from the LASSO solution at the same lambda,
each outer step solves a weighted-L1 surrogate whose weights are the
penalty derivative at the current coefficients. The surrogates are
solved by cyclic coordinate descent with an ever-active work set; path
fits add warm starts, and every solve ends with a full-gradient KKT
scan that pulls in violators, so the work set never changes the answer.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .penalty import PenaltyFamily, PenaltySpec, penalty_derivative, penalty_value

__all__ = [
    "DesignMatrix",
    "FitResult",
    "CvReport",
    "SolverOptions",
    "PenalizedProblem",
    "ls_problem",
    "logistic_problem",
    "fit_penalized_ls",
    "fit_penalized_logistic",
    "fit_lambda_path",
    "cross_validate",
    "lambda_max",
    "default_lambda_grid",
]


# hard ceiling on reweighting rounds per fit; reaching it without the
# coefficients stabilizing is reported as non-convergence
_LLA_CAP = 25


# ---------------------------------------------------------------------------
# data containers


@dataclass(frozen=True)
class DesignMatrix:
    """Validated design matrix.

    has_intercept marks a leading all-ones column (never penalized by
    the fitters). standardized asserts non-intercept column norms equal
    sqrt(n) within 1e-8, the scale the tuning theory assumes.
    column_names / column_scales are optional bookkeeping used by the
    io layer to report coefficients on the original column scale.
    """

    values: np.ndarray
    has_intercept: bool = False
    standardized: bool = False
    column_names: tuple[str, ...] | None = None
    column_scales: np.ndarray | None = None

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise ValueError("design matrix must be a nonempty 2-d array")
        if not np.all(np.isfinite(vals)):
            raise ValueError("design matrix contains NaN or Inf entries")
        object.__setattr__(self, "values", vals)
        n, p = vals.shape
        if self.has_intercept and not np.all(vals[:, 0] == 1.0):
            raise ValueError("has_intercept=True requires a leading all-ones column")
        if self.standardized:
            cols = vals[:, 1:] if self.has_intercept else vals
            if cols.shape[1]:
                norms = np.linalg.norm(cols, axis=0)
                root_n = np.sqrt(n)
                if np.any(np.abs(norms - root_n) > 1e-8 * root_n):
                    raise ValueError(
                        "standardized=True requires non-intercept column norms sqrt(n)"
                    )
        if self.column_names is not None:
            names = tuple(str(c) for c in self.column_names)
            if len(names) != p:
                raise ValueError("column_names length does not match design width")
            object.__setattr__(self, "column_names", names)
        if self.column_scales is not None:
            scales = np.asarray(self.column_scales, dtype=np.float64)
            if scales.shape != (p,):
                raise ValueError("column_scales length does not match design width")
            object.__setattr__(self, "column_scales", scales)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def subset_rows(self, idx: np.ndarray) -> "DesignMatrix":
        # row subsets lose the exact sqrt(n) normalization, drop the flag
        return DesignMatrix(
            self.values[idx],
            has_intercept=self.has_intercept,
            standardized=False,
            column_names=self.column_names,
            column_scales=self.column_scales,
        )


@dataclass(frozen=True)
class FitResult:
    """One penalized fit. support is the exact nonzero pattern of
    coefficients; objective is loss + penalty recomputable from the
    stored coefficients; iterations counts coordinate sweeps."""

    coefficients: np.ndarray
    support: np.ndarray
    lam: float
    objective: float
    iterations: int
    converged: bool
    kkt_residual: float


@dataclass(frozen=True)
class CvReport:
    lambda_grid: np.ndarray
    mean_cv_loss: np.ndarray
    se_cv_loss: np.ndarray
    selected_lambda: float
    fold_assignment_seed: int
    n_folds: int
    degenerate: bool


@dataclass
class SolverOptions:
    """Knobs shared by all fitters.

    tolerance is the max absolute coefficient change per sweep that
    counts as converged; max_sweeps bounds coordinate sweeps per fit;
    lla_steps is the guaranteed number of reweighting rounds after the
    LASSO initialization (extra rounds run only while the coefficients
    are still moving, so the reported stationarity residual is taken at
    self-consistent weights).
    """

    tolerance: float = 1e-7
    max_sweeps: int = 10_000
    lla_steps: int = 3
    lambda_grid_size: int = 100
    lambda_min_ratio: float = 0.01
    kkt_tol: float = 1e-4
    irls_max: int = 100
    weight_floor: float = 1e-5
    prob_clip: float = 1e-6
    eta_bound: float = 30.0

    def __post_init__(self):
        if self.tolerance <= 0 or self.max_sweeps < 1 or self.lla_steps < 1:
            raise ValueError("tolerance, max_sweeps and lla_steps must be positive")
        if self.lambda_grid_size < 1 or not 0 < self.lambda_min_ratio <= 1:
            raise ValueError("invalid lambda grid settings")


@dataclass(frozen=True)
class PenalizedProblem:
    """A penalized regression instance: loss kind, data and penalty
    family with the lambda left open (path and CV fill it in)."""

    kind: str
    design: DesignMatrix
    response: np.ndarray
    family: PenaltyFamily
    shape: float | None
    penalty_free: tuple[int, ...]

    def spec_at(self, lam: float) -> PenaltySpec:
        return PenaltySpec(self.family, float(lam), self.shape)


def _default_free(design: DesignMatrix) -> tuple[int, ...]:
    return (0,) if design.has_intercept else ()


def _make_problem(kind, design, response, family, shape, penalty_free):
    y = np.asarray(response, dtype=np.float64).ravel()
    if y.shape[0] != design.n:
        raise ValueError("response length does not match design rows")
    if not np.all(np.isfinite(y)):
        raise ValueError("response contains NaN or Inf entries")
    if kind == "logistic" and np.any((y != 0.0) & (y != 1.0)):
        raise ValueError("logistic response must be binary with values in {0, 1}")
    fam = family if isinstance(family, PenaltyFamily) else PenaltyFamily.from_name(family)
    # validate shape defaults through PenaltySpec
    spec = PenaltySpec(fam, 0.0, shape)
    free = _default_free(design) if penalty_free is None else tuple(int(j) for j in penalty_free)
    for j in free:
        if not 0 <= j < design.p:
            raise ValueError(f"penalty_free index {j} out of range")
    return PenalizedProblem(kind, design, y, fam, spec.shape, free)


def ls_problem(design, y, family="scad", shape=None, penalty_free=None) -> PenalizedProblem:
    return _make_problem("ls", design, y, family, shape, penalty_free)


def logistic_problem(design, a, family="scad", shape=None, penalty_free=None) -> PenalizedProblem:
    return _make_problem("logistic", design, a, family, shape, penalty_free)


# ---------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def _cd_pass(XT, r, wobs, coef, penw, den, two_n, idx):
    # one cyclic pass over idx; r is kept equal to response - X coef
    maxd = 0.0
    n = r.size
    for k in range(idx.size):
        j = idx[k]
        dj = den[j]
        if dj <= 0.0:
            continue
        xj = XT[j]
        g = 0.0
        for i in range(n):
            g += wobs[i] * xj[i] * r[i]
        z = two_n * g + dj * coef[j]
        lamj = penw[j]
        if z > lamj:
            new = (z - lamj) / dj
        elif z < -lamj:
            new = (z + lamj) / dj
        else:
            new = 0.0
        d = new - coef[j]
        if d != 0.0:
            coef[j] = new
            for i in range(n):
                r[i] -= d * xj[i]
            ad = abs(d)
            if ad > maxd:
                maxd = ad
    return maxd


@njit(cache=True)
def _cd_solve(XT, r, wobs, coef, penw, den, two_n, work, tol, budget):
    # full passes over work alternated with passes over its nonzero
    # subset until the largest coefficient change drops below tol
    sweeps = 0
    converged = False
    while sweeps < budget:
        maxd = _cd_pass(XT, r, wobs, coef, penw, den, two_n, work)
        sweeps += 1
        if maxd < tol:
            converged = True
            break
        cnt = 0
        for k in range(work.size):
            j = work[k]
            if coef[j] != 0.0 or penw[j] == 0.0:
                cnt += 1
        nz = np.empty(cnt, np.int64)
        m = 0
        for k in range(work.size):
            j = work[k]
            if coef[j] != 0.0 or penw[j] == 0.0:
                nz[m] = j
                m += 1
        while sweeps < budget:
            maxd = _cd_pass(XT, r, wobs, coef, penw, den, two_n, nz)
            sweeps += 1
            if maxd < tol:
                break
    return sweeps, converged


# ---------------------------------------------------------------------------
# shared pieces


def _expit(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _logistic_loss(eta, a):
    return float(np.mean(np.logaddexp(0.0, eta) - a * eta))


class _BaseFitter:
    def __init__(self, problem: PenalizedProblem, opts: SolverOptions):
        self.problem = problem
        self.opts = opts
        self.X = problem.design.values
        self.XT = np.ascontiguousarray(self.X.T)
        self.y = problem.response
        self.n, self.p = self.X.shape
        self.two_n = 2.0 / self.n
        self.free = np.array(sorted(set(problem.penalty_free)), dtype=np.int64)
        self.pen_mask = np.ones(self.p, dtype=bool)
        self.pen_mask[self.free] = False

    def base_weights(self, lam: float) -> np.ndarray:
        penw = np.full(self.p, float(lam))
        penw[self.free] = 0.0
        return penw

    def lla_weights(self, lam: float, coef: np.ndarray) -> np.ndarray:
        spec = self.problem.spec_at(lam)
        penw = np.zeros(self.p)
        penw[self.pen_mask] = penalty_derivative(spec, np.abs(coef[self.pen_mask]))
        return penw

    def work_set(self, coef, warm):
        # ever-active strategy: start from the warm-start support plus
        # unpenalized columns; the full-gradient scan in solve_weighted
        # pulls in any column whose KKT condition is violated
        if not warm:
            return np.arange(self.p, dtype=np.int64)
        keep = coef != 0.0
        keep[self.free] = True
        return np.flatnonzero(keep).astype(np.int64)

    def folded_kkt(self, lam, coef, g):
        spec = self.problem.spec_at(lam)
        res = 0.0
        nz = (coef != 0.0) & self.pen_mask
        if np.any(nz):
            w = penalty_derivative(spec, np.abs(coef[nz]))
            res = max(res, float(np.max(np.abs(g[nz] - np.sign(coef[nz]) * w))))
        if self.free.size:
            res = max(res, float(np.max(np.abs(g[self.free]))))
        z = (~nz) & self.pen_mask
        if np.any(z):
            res = max(res, float(max(0.0, np.max(np.abs(g[z])) - lam)))
        return res

    def objective(self, lam, coef):
        spec = self.problem.spec_at(lam)
        pen = float(np.sum(penalty_value(spec, np.abs(coef[self.pen_mask]))))
        return self.loss(coef) + pen

    def result(self, lam, coef, sweeps, converged, g):
        kkt = self.folded_kkt(lam, coef, g)
        coef = coef.copy()
        coef.flags.writeable = False
        return FitResult(
            coefficients=coef,
            support=np.flatnonzero(coef).astype(np.int64),
            lam=float(lam),
            objective=self.objective(lam, coef),
            iterations=int(sweeps),
            converged=bool(converged and kkt <= self.opts.kkt_tol),
            kkt_residual=float(kkt),
        )

    def lla_loop(self, lam, coef, work, total, conv, g):
        # reweight at least lla_steps times, then keep going while the
        # coefficients still move (stale weights would otherwise leave
        # the folded stationarity conditions unmet). Each round is a
        # majorize-minimize step, so the folded objective cannot rise:
        # once it goes flat the descent has stalled and further rounds
        # only cycle among equal-value points. Either way the KKT
        # residual check in result() decides the converged flag.
        opts = self.opts
        obj_prev = np.inf
        for step in range(max(opts.lla_steps, _LLA_CAP)):
            prev = coef.copy()
            penw = self.lla_weights(lam, coef)
            budget = opts.max_sweeps - total
            if budget <= 0:
                conv = False
                break
            sweeps, conv, g = self.solve_weighted(penw, coef, work, budget)
            total += sweeps
            if np.max(np.abs(coef - prev)) < opts.tolerance:
                break
            obj = self.objective(lam, coef)
            if step + 1 >= opts.lla_steps and obj > obj_prev - 1e-10 * max(1.0, abs(obj)):
                break
            obj_prev = obj
        return coef, total, conv, g

    def fit_at(self, lam, coef0=None):
        if lam < 0 or not np.isfinite(lam):
            raise ValueError("lambda must be finite and >= 0")
        opts = self.opts
        coef = np.zeros(self.p) if coef0 is None else np.array(coef0, dtype=np.float64)
        if coef.shape != (self.p,):
            raise ValueError("warm start coefficient length mismatch")
        work = self.work_set(coef, warm=coef0 is not None)
        total = 0
        # LASSO stage doubles as the LLA initialization at this lambda
        penw = self.base_weights(lam)
        sweeps, conv, g = self.solve_weighted(penw, coef, work, opts.max_sweeps)
        total += sweeps
        lasso_coef = coef.copy()
        if self.problem.family is not PenaltyFamily.LASSO and lam > 0:
            coef, total, conv, g = self.lla_loop(lam, coef, work, total, conv, g)
        return self.result(lam, coef, total, conv, g), lasso_coef

    def fit_folded_from(self, lam, init):
        """LLA started at a caller-supplied linearization point, skipping
        the LASSO initialization stage. Used as a second descent start:
        folded objectives are nonconvex and the LASSO start can land in
        a basin with shrunken coefficients when a flatter one exists."""
        coef = np.asarray(init, dtype=np.float64).copy()
        if coef.shape != (self.p,):
            raise ValueError("init coefficient length mismatch")
        work = self.work_set(coef, warm=True)
        coef, total, conv, g = self.lla_loop(lam, coef, work, 0, False, None)
        return self.result(lam, coef, total, conv, g)


class _LsFitter(_BaseFitter):
    def __init__(self, problem, opts, wobs=None):
        super().__init__(problem, opts)
        self.wobs = np.ones(self.n) if wobs is None else np.asarray(wobs, float)
        self.den = self.two_n * ((self.X * self.X).T @ self.wobs)

    def loss(self, coef):
        r = self.y - self.X @ coef
        return float(self.wobs @ (r * r)) / self.n

    def neg_gradient(self, r):
        return self.two_n * (self.XT @ (self.wobs * r))

    def unpenalized_init(self):
        root_w = np.sqrt(self.wobs)
        sol, *_ = np.linalg.lstsq(self.X * root_w[:, None], self.y * root_w,
                                  rcond=None)
        return sol

    def solve_weighted(self, penw, coef, work, budget, expand=True):
        """Solve the weighted-L1 problem at fixed penalty weights.
        Expands the work set on KKT violations until none remain."""
        r = self.y - self.X @ coef
        total = 0
        converged = False
        # the work set must cover the support: a nonzero coordinate left
        # outside would be frozen at a stale value
        in_work = np.zeros(self.p, dtype=bool)
        in_work[work] = True
        if expand:
            in_work[coef != 0.0] = True
            work = np.flatnonzero(in_work).astype(np.int64)
        while True:
            sweeps, converged = _cd_solve(
                self.XT, r, self.wobs, coef, penw, self.den, self.two_n,
                work, self.opts.tolerance, budget - total,
            )
            total += sweeps
            g = self.neg_gradient(r)
            if not expand:
                break
            viol = np.flatnonzero(~in_work & (np.abs(g) > penw + 1e-9))
            if viol.size == 0 or total >= budget:
                break
            in_work[viol] = True
            work = np.flatnonzero(in_work).astype(np.int64)
        return total, converged, g


class _LogisticFitter(_BaseFitter):
    def __init__(self, problem, opts):
        super().__init__(problem, opts)
        self.Xsq = self.X * self.X

    def loss(self, coef):
        return _logistic_loss(self.X @ coef, self.y)

    def unpenalized_init(self):
        coef = np.zeros(self.p)
        self.solve_weighted(np.zeros(self.p), coef,
                            np.arange(self.p, dtype=np.int64),
                            self.opts.max_sweeps, expand=False)
        return coef

    def penalized_l1(self, coef, penw):
        return self.loss(coef) + float(penw @ np.abs(coef))

    def neg_gradient(self, coef):
        pi = _expit(self.X @ coef)
        return (self.XT @ (self.y - pi)) / self.n

    def solve_weighted(self, penw, coef, work, budget, expand=True):
        """IRLS outer loop; each step solves the penalized quadratic
        surrogate by coordinate descent and is step-halved if needed so
        the penalized logistic objective never increases."""
        opts = self.opts
        total = 0
        converged = False
        in_work = np.zeros(self.p, dtype=bool)
        in_work[work] = True
        if expand:
            in_work[coef != 0.0] = True
            work = np.flatnonzero(in_work).astype(np.int64)
        obj = self.penalized_l1(coef, penw)
        while True:
            converged = False
            hit_bound = False
            for _ in range(opts.irls_max):
                eta = self.X @ coef
                if np.max(np.abs(eta)) > opts.eta_bound:
                    hit_bound = True
                    break
                pi = _expit(eta)
                w = np.maximum(pi * (1.0 - pi), opts.weight_floor)
                wobs = 0.5 * w
                den = self.two_n * (self.Xsq.T @ wobs)
                r = (self.y - pi) / w  # residual of the working response
                prev = coef.copy()
                budget_left = budget - total
                if budget_left <= 0:
                    break
                sweeps, _ = _cd_solve(
                    self.XT, r, wobs, coef, penw, den, self.two_n,
                    work, opts.tolerance, budget_left,
                )
                total += sweeps
                obj_new = self.penalized_l1(coef, penw)
                halvings = 0
                while obj_new > obj + 1e-12 and halvings < 12:
                    coef = 0.5 * (coef + prev)
                    obj_new = self.penalized_l1(coef, penw)
                    halvings += 1
                if obj_new > obj + 1e-12:
                    coef[:] = prev
                    converged = True  # no further descent along IRLS steps
                    break
                delta = float(np.max(np.abs(coef - prev)))
                obj = obj_new
                if delta < opts.tolerance:
                    converged = True
                    break
            if hit_bound:
                converged = False
            g = self.neg_gradient(coef)
            if not expand:
                break
            viol = np.flatnonzero(~in_work & (np.abs(g) > penw + 1e-9))
            if viol.size == 0 or total >= budget or hit_bound:
                break
            in_work[viol] = True
            work = np.flatnonzero(in_work).astype(np.int64)
        return total, converged, g


def _fitter_for(problem: PenalizedProblem, opts: SolverOptions):
    if problem.kind == "ls":
        return _LsFitter(problem, opts)
    if problem.kind == "logistic":
        return _LogisticFitter(problem, opts)
    raise ValueError(f"unknown problem kind {problem.kind!r}")


def smooth_loss_gradient(problem: PenalizedProblem, coef):
    """Unpenalized loss and its analytic gradient at coef.

    Uses the same scaling as the stored objectives and the KKT checks:
    squared-error loss ||y - Xb||^2 / n, logistic loss mean
    log(1 + exp(eta)) - a * eta.
    """
    coef = np.asarray(coef, dtype=np.float64).ravel()
    if coef.shape != (problem.design.p,):
        raise ValueError(f"coef must have length p={problem.design.p}")
    fitter = _fitter_for(problem, SolverOptions())
    if problem.kind == "ls":
        r = problem.response - problem.design.values @ coef
        return fitter.loss(coef), -fitter.neg_gradient(r)
    return fitter.loss(coef), -fitter.neg_gradient(coef)


# ---------------------------------------------------------------------------
# public fitting interface


def _fit_fixed(fitter, lam, coef0) -> FitResult:
    """One fixed-lambda fit; for cold folded-penalty fits on designs with
    more rows than columns, also try LLA from the unpenalized solution
    and keep the lower objective. The LASSO start can stay in a basin of
    over-shrunken coefficients; the unpenalized start covers the flat
    region of the penalty. The second start needs a well-posed
    unpenalized fit, so it is only attempted when n > p."""
    res, _ = fitter.fit_at(lam, coef0)
    problem = fitter.problem
    if (coef0 is not None or problem.family is PenaltyFamily.LASSO
            or lam <= 0.0 or problem.design.n <= problem.design.p):
        return res
    alt = fitter.fit_folded_from(lam, fitter.unpenalized_init())
    return alt if alt.objective < res.objective - 1e-12 else res


def fit_penalized_ls(design, y, spec: PenaltySpec, opts=None, penalty_free=None,
                     coef0=None) -> FitResult:
    """Penalized least squares of y on the design at spec.lam."""
    if spec.lam is None:
        raise ValueError("PenaltySpec.lam is unset; fix it or use cross_validate")
    problem = ls_problem(design, y, spec.family, spec.shape, penalty_free)
    return _fit_fixed(_LsFitter(problem, opts or SolverOptions()), spec.lam, coef0)


def fit_penalized_logistic(design, a, spec: PenaltySpec, opts=None, penalty_free=None,
                           coef0=None) -> FitResult:
    """Penalized logistic regression of a binary response on the design."""
    if spec.lam is None:
        raise ValueError("PenaltySpec.lam is unset; fix it or use cross_validate")
    problem = logistic_problem(design, a, spec.family, spec.shape, penalty_free)
    return _fit_fixed(_LogisticFitter(problem, opts or SolverOptions()), spec.lam, coef0)


def lambda_max(problem: PenalizedProblem, opts=None) -> float:
    """Smallest lambda that zeroes every penalized coordinate: the max
    absolute loss gradient over penalized coordinates after fitting the
    unpenalized coordinates alone."""
    opts = opts or SolverOptions()
    fitter = _fitter_for(problem, opts)
    free = fitter.free
    coef = np.zeros(fitter.p)
    if problem.kind == "ls":
        if free.size:
            sol, *_ = np.linalg.lstsq(fitter.X[:, free], problem.response, rcond=None)
            coef[free] = sol
        g = fitter.neg_gradient(problem.response - fitter.X @ coef)
    else:
        if free.size:
            penw = np.zeros(fitter.p)
            fitter.solve_weighted(penw, coef, free, opts.max_sweeps, expand=False)
        g = fitter.neg_gradient(coef)
    if not np.any(fitter.pen_mask):
        return 0.0
    return float(np.max(np.abs(g[fitter.pen_mask])))


def default_lambda_grid(problem: PenalizedProblem, opts=None) -> np.ndarray:
    """Log-spaced descending grid from lambda_max down to
    lambda_min_ratio * lambda_max with lambda_grid_size points."""
    opts = opts or SolverOptions()
    hi = max(lambda_max(problem, opts), 1e-8)
    if opts.lambda_grid_size == 1:
        return np.array([hi])
    return np.geomspace(hi, hi * opts.lambda_min_ratio, opts.lambda_grid_size)


def _check_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64).ravel()
    if grid.size == 0:
        raise ValueError("lambda grid is empty")
    if not np.all(np.isfinite(grid)) or np.any(grid < 0.0):
        raise ValueError("lambda grid must be finite and nonnegative")
    if grid.size > 1 and np.any(np.diff(grid) >= 0.0):
        raise ValueError("lambda grid must be strictly decreasing")
    return grid


def fit_lambda_path(problem: PenalizedProblem, grid=None, opts=None) -> list[FitResult]:
    """Fit the full path over a decreasing lambda grid with warm starts.

    Returns one FitResult per grid point, in grid order. Warm starts
    only change the coordinate descent starting point, not the fixed
    point: each grid point still uses its own LASSO solution as the
    LLA initialization.
    """
    opts = opts or SolverOptions()
    grid = _check_grid(default_lambda_grid(problem, opts) if grid is None else grid)
    fitter = _fitter_for(problem, opts)
    results = []
    lasso_coef = None
    for lam in grid:
        res, lasso_coef = fitter.fit_at(lam, coef0=lasso_coef)
        results.append(res)
    return results


def _prediction_loss(problem, results, X_val, y_val, opts):
    preds = X_val @ np.stack([res.coefficients for res in results]).T  # n_val x L
    if problem.kind == "ls":
        d = y_val[:, None] - preds
        return np.mean(d * d, axis=0)
    pi = np.clip(_expit(preds), opts.prob_clip, 1.0 - opts.prob_clip)
    dev = -2.0 * (y_val[:, None] * np.log(pi) + (1.0 - y_val)[:, None] * np.log1p(-pi))
    return np.mean(dev, axis=0)


def cross_validate(problem: PenalizedProblem, n_folds=10, grid=None, seed=0,
                   opts=None) -> CvReport:
    """K-fold cross-validation over a lambda path.

    Folds are a seeded permutation split; the loss is squared error for
    ls problems and deviance (with clipped probabilities) for logistic
    ones, pooled over observations. Ties select the larger lambda.
    """
    opts = opts or SolverOptions()
    n = problem.design.n
    n_folds = int(n_folds)
    if not 2 <= n_folds <= n:
        raise ValueError(f"n_folds must satisfy 2 <= K <= n, got K={n_folds}, n={n}")
    grid = _check_grid(default_lambda_grid(problem, opts) if grid is None else grid)
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, n_folds)
    loss_sum = np.zeros(grid.size)
    fold_means = np.empty((n_folds, grid.size))
    for f, val_idx in enumerate(folds):
        train_idx = np.concatenate([folds[k] for k in range(n_folds) if k != f])
        sub = replace(
            problem,
            design=problem.design.subset_rows(train_idx),
            response=problem.response[train_idx],
        )
        results = fit_lambda_path(sub, grid, opts)
        losses = _prediction_loss(
            problem, results, problem.design.values[val_idx],
            problem.response[val_idx], opts,
        )
        fold_means[f] = losses
        loss_sum += losses * val_idx.size
    mean_cv = loss_sum / n
    se_cv = np.std(fold_means, axis=0, ddof=1) / np.sqrt(n_folds)
    best = int(np.argmin(mean_cv))  # first minimum = largest lambda on ties
    spread = float(mean_cv.max() - mean_cv.min())
    degenerate = spread <= 1e-10 * max(1.0, float(np.max(np.abs(mean_cv))))
    return CvReport(
        lambda_grid=grid,
        mean_cv_loss=mean_cv,
        se_cv_loss=se_cv,
        selected_lambda=float(grid[best]),
        fold_assignment_seed=int(seed),
        n_folds=n_folds,
        degenerate=degenerate,
    )

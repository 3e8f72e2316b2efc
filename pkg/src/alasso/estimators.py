"""Least-squares and weighted-L1 penalized estimation.

The penalized criterion, written on the sum-of-squares scale, is

    sum_t (y_t - c'z_t)^2  +  lam * sum_i w_i |c_i|,

with data-driven weights w_i equal to the reciprocal absolute pilot
(least-squares) coefficients. The solver is cyclic coordinate descent on
the precomputed Gram matrix; the same routine also minimizes the random
quadratic-plus-L1 objectives used for limit-law quantiles, so both code
paths share one implementation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import TimeSeriesDataset
from .errors import ConvergenceWarning, SingularDesignError

CONDITION_CAP = 1e12
DEFAULT_WEIGHT_CAP = 1e12
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10_000


def soft_threshold(a, b):
    """Shrink ``a`` toward zero by ``b``: sign(a) * max(|a| - b, 0).

    Accepts scalars or arrays; ``b`` must be nonnegative.
    """
    return np.sign(a) * np.maximum(np.abs(a) - b, 0.0)


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty level and per-coefficient weights.

    ``weights[i]`` is 1/|pilot coefficient i|, capped at ``weight_cap`` when
    the pilot estimate is numerically zero so the construction never
    divides by zero (the capped variable is effectively excluded).
    """

    lam: float
    weights: np.ndarray
    weight_cap: float = DEFAULT_WEIGHT_CAP

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValueError(f"penalty level must be nonnegative, got {self.lam}")
        weights = np.asarray(self.weights, dtype=float).copy()
        if weights.ndim != 1:
            raise ValueError("weights must be a vector")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise ValueError("weights must be strictly positive and finite")
        weights.flags.writeable = False
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_pilot(cls, pilot_coef: np.ndarray, lam: float,
                   weight_cap: float = DEFAULT_WEIGHT_CAP) -> "PenaltySpec":
        """Reciprocal-magnitude weights from a pilot coefficient vector."""
        pilot_coef = np.asarray(pilot_coef, dtype=float)
        with np.errstate(divide="ignore"):
            weights = 1.0 / np.abs(pilot_coef)
        weights[~np.isfinite(weights)] = weight_cap
        np.minimum(weights, weight_cap, out=weights)
        return cls(lam=lam, weights=weights, weight_cap=weight_cap)


@dataclass(frozen=True)
class FitResult:
    """A fitted coefficient vector plus everything needed to audit it.

    ``active_set`` lists the indices with exactly nonzero coefficients;
    thresholded coordinates are stored as literal 0.0. Residuals always
    satisfy ``residuals == y - design @ coef`` up to floating-point noise.
    """

    coef: np.ndarray
    active_set: tuple[int, ...]
    residuals: np.ndarray
    rss: float
    method: str
    penalty: PenaltySpec | None = None
    solver_iters: int = 0
    converged: bool = True

    def __post_init__(self) -> None:
        for name in ("coef", "residuals"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "active_set", tuple(int(i) for i in self.active_set))


def _objective(gram: np.ndarray, lin: np.ndarray, pen: np.ndarray, x: np.ndarray) -> float:
    quad = float(x @ gram @ x - 2.0 * lin @ x)
    return quad + float(pen @ np.abs(x))


def coordinate_descent(
    gram: np.ndarray,
    lin: np.ndarray,
    pen: np.ndarray,
    init: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    debug: bool = False,
) -> tuple[np.ndarray, int, bool]:
    """Minimize x'Gx - 2 b'x + sum_i pen_i |x_i| by cyclic coordinate descent.

    Parameters
    ----------
    gram : (p, p) ndarray
        Positive-definite quadratic term G.
    lin : (p,) or (m, p) ndarray
        Linear term b; a 2-d array solves m independent problems sharing G.
    pen : (p,) ndarray
        Nonnegative L1 penalty per coordinate.
    init : ndarray, optional
        Starting point with the same shape as ``lin``; zeros when omitted.
    tol : float
        Sweep stops when the largest coordinate change falls below this.
    debug : bool
        Assert that the objective never increases across sweeps.

    Returns
    -------
    (solution, sweeps, converged)
    """
    gram = np.asarray(gram, dtype=float)
    lin = np.asarray(lin, dtype=float)
    pen = np.asarray(pen, dtype=float)
    p = gram.shape[0]
    diag = np.diag(gram).copy()
    if np.any(diag <= 0):
        raise SingularDesignError("quadratic term has a nonpositive diagonal entry")
    half = 0.5 * pen

    if lin.ndim == 1:
        x = np.zeros(p) if init is None else np.array(init, dtype=float)
        grad = lin - gram @ x  # b - Gx, maintained incrementally
        prev_obj = _objective(gram, lin, pen, x) if debug else 0.0
        for sweep in range(1, max_iter + 1):
            max_delta = 0.0
            for j in range(p):
                xj = x[j]
                aj = grad[j] + diag[j] * xj
                hj = half[j]
                if aj > hj:
                    new = (aj - hj) / diag[j]
                elif aj < -hj:
                    new = (aj + hj) / diag[j]
                else:
                    new = 0.0
                delta = new - xj
                if delta != 0.0:
                    grad -= delta * gram[j]
                    x[j] = new
                    ad = abs(delta)
                    if ad > max_delta:
                        max_delta = ad
            if debug:
                obj = _objective(gram, lin, pen, x)
                assert obj <= prev_obj + 1e-9 * (1.0 + abs(prev_obj)), (
                    f"objective rose from {prev_obj} to {obj} on sweep {sweep}"
                )
                prev_obj = obj
            if max_delta < tol:
                return x, sweep, True
        return x, max_iter, False

    x = np.zeros_like(lin) if init is None else np.array(init, dtype=float)
    grad = lin - x @ gram
    for sweep in range(1, max_iter + 1):
        max_delta = 0.0
        for j in range(p):
            aj = grad[:, j] + diag[j] * x[:, j]
            new = soft_threshold(aj, half[j]) / diag[j]
            delta = new - x[:, j]
            if np.any(delta != 0.0):
                grad -= delta[:, None] * gram[j][None, :]
                x[:, j] = new
                max_delta = max(max_delta, float(np.max(np.abs(delta))))
        if max_delta < tol:
            return x, sweep, True
    return x, max_iter, False


def _gram_terms(data: TimeSeriesDataset) -> tuple[np.ndarray, np.ndarray]:
    design = data.design
    return design.T @ design, design.T @ data.y


def _check_design_rank(data: TimeSeriesDataset) -> None:
    design = data.design
    # cond via the p x p triangular factor; cond(R) == cond(Z).
    r = np.linalg.qr(design, mode="r")
    sv = np.linalg.svd(r, compute_uv=False)
    if sv[-1] <= 0 or sv[0] / sv[-1] > CONDITION_CAP:
        norms = np.sqrt(np.sum(design**2, axis=0))
        zero_cols = [data.names[j] for j in np.flatnonzero(norms == 0.0)]
        detail = f" (all-zero column(s): {', '.join(zero_cols)})" if zero_cols else ""
        scaled = design / np.where(norms == 0.0, 1.0, norms)
        corr = scaled.T @ scaled
        np.fill_diagonal(corr, 0.0)
        pairs = np.argwhere(np.abs(corr) > 1.0 - 1e-10)
        dupes = sorted(
            {f"{data.names[i]}~{data.names[j]}" for i, j in pairs if i < j}
        )
        if dupes:
            detail += f" (collinear pair(s): {', '.join(dupes)})"
        raise SingularDesignError(
            f"design is numerically rank deficient (condition > {CONDITION_CAP:g}){detail}"
        )


def ols_fit(data: TimeSeriesDataset) -> FitResult:
    """Least-squares fit via QR; errors out on a rank-deficient design."""
    _check_design_rank(data)
    q, r = np.linalg.qr(data.design)
    coef = np.linalg.solve(r, q.T @ data.y)
    residuals = data.y - data.design @ coef
    return FitResult(
        coef=coef,
        active_set=tuple(range(data.p)),
        residuals=residuals,
        rss=float(residuals @ residuals),
        method="ols",
    )


def adaptive_lasso_fit(
    data: TimeSeriesDataset,
    penalty: PenaltySpec,
    init: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    gram: tuple[np.ndarray, np.ndarray] | None = None,
    debug: bool = False,
) -> FitResult:
    """Penalized fit by coordinate descent on the Gram matrix.

    Parameters
    ----------
    gram : (G, b) pair, optional
        Precomputed ``design' design`` and ``design' y``; lets a tuning path
        avoid recomputing them for every penalty level.

    Notes
    -----
    Non-convergence within ``max_iter`` sweeps returns the last iterate with
    ``converged=False`` and emits a :class:`ConvergenceWarning` rather than
    raising.
    """
    if len(penalty.weights) != data.p:
        raise ValueError(
            f"{len(penalty.weights)} penalty weights for {data.p} columns"
        )
    if tol <= 0:
        raise ValueError("tol must be positive")
    if gram is None:
        g, b = _gram_terms(data)
    else:
        g, b = gram
    if np.any(np.diag(g) <= 0):
        bad = [data.names[j] for j in np.flatnonzero(np.diag(g) <= 0)]
        raise SingularDesignError(f"all-zero design column(s): {', '.join(bad)}")
    pen = penalty.lam * penalty.weights
    coef, sweeps, converged = coordinate_descent(
        g, b, pen, init=init, tol=tol, max_iter=max_iter, debug=debug
    )
    if not converged:
        warnings.warn(
            f"coordinate descent stopped after {max_iter} sweeps without "
            f"reaching tol={tol:g}",
            ConvergenceWarning,
            stacklevel=2,
        )
    residuals = data.y - data.design @ coef
    return FitResult(
        coef=coef,
        active_set=tuple(int(j) for j in np.flatnonzero(coef != 0.0)),
        residuals=residuals,
        rss=float(residuals @ residuals),
        method="adaptive_lasso",
        penalty=penalty,
        solver_iters=sweeps,
        converged=converged,
    )


def kkt_gap(fit: FitResult, data: TimeSeriesDataset) -> float:
    """Worst first-order-condition violation, in coefficient units.

    For active coordinates the score 2 z_j'(y - Z c) must equal the signed
    penalty lam * w_j; for inactive ones its magnitude may not exceed the
    penalty. Violations are scaled by 2 * z_j'z_j so the tolerance reads on
    the coefficient scale regardless of column norms.
    """
    if fit.penalty is None:
        raise ValueError("KKT gap is defined for penalized fits only")
    score = 2.0 * (data.design.T @ fit.residuals)
    pen = fit.penalty.lam * fit.penalty.weights
    scale = 2.0 * np.sum(data.design**2, axis=0)
    worst = 0.0
    for j in range(data.p):
        if fit.coef[j] != 0.0:
            gap = abs(score[j] - math.copysign(pen[j], fit.coef[j]))
        else:
            gap = max(abs(score[j]) - pen[j], 0.0)
        worst = max(worst, gap / scale[j])
    return worst


def bic_score(fit: FitResult, n: int) -> float:
    """Schwarz criterion n*ln(rss/n) + |active| * ln(n).

    A perfect fit (rss == 0) returns -inf with a warning so the caller can
    still rank candidates.
    """
    if fit.rss <= 0.0:
        warnings.warn("perfect fit: rss is zero, returning -inf", stacklevel=2)
        return float("-inf")
    return n * math.log(fit.rss / n) + len(fit.active_set) * math.log(n)


@dataclass(frozen=True)
class BicPath:
    """Penalized fits along an ascending penalty grid plus the BIC choice.

    The grid starts at 0 (the unpenalized fit) and ends at n**0.25; ties in
    the criterion resolve toward the smaller penalty. ``pilot`` is the
    least-squares fit whose coefficients define the penalty weights.
    """

    grid: np.ndarray
    fits: tuple[FitResult, ...]
    bic: np.ndarray
    selected_index: int
    pilot: FitResult

    @property
    def selected_fit(self) -> FitResult:
        return self.fits[self.selected_index]

    @property
    def selected_lam(self) -> float:
        return float(self.grid[self.selected_index])


def penalty_grid(n: int, grid_size: int) -> np.ndarray:
    """{0} plus grid_size - 1 equally spaced points on (0, n**0.25]."""
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    top = float(n) ** 0.25
    body = np.linspace(top / (grid_size - 1), top, grid_size - 1)
    return np.concatenate(([0.0], body))


def fit_path(
    data: TimeSeriesDataset,
    grid_size: int = 100,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    weight_cap: float = DEFAULT_WEIGHT_CAP,
    debug: bool = False,
) -> BicPath:
    """Warm-started penalty path with BIC selection.

    One least-squares fit supplies both the penalty weights and the warm
    start for the zero-penalty grid point; each subsequent grid point starts
    from the previous solution.
    """
    pilot = ols_fit(data)
    grid = penalty_grid(data.n, grid_size)
    g, b = _gram_terms(data)
    weights = PenaltySpec.from_pilot(pilot.coef, 0.0, weight_cap=weight_cap).weights
    fits = []
    bics = np.empty(len(grid))
    current = pilot.coef
    for k, lam in enumerate(grid):
        penalty = PenaltySpec(lam=float(lam), weights=weights, weight_cap=weight_cap)
        fit = adaptive_lasso_fit(
            data, penalty, init=current, tol=tol, max_iter=max_iter,
            gram=(g, b), debug=debug,
        )
        fits.append(fit)
        bics[k] = bic_score(fit, data.n)
        current = fit.coef
    selected = int(np.argmin(bics))  # argmin takes the first (smallest) penalty on ties
    return BicPath(
        grid=grid, fits=tuple(fits), bic=bics, selected_index=selected, pilot=pilot
    )

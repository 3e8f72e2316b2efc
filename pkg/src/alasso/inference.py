"""Moment estimation, bias-corrected intervals, coefficient tests, and
limit-law quantile simulation.

The asymptotic covariance of the scaled estimator is the sandwich
``gram^-1 @ score_cov @ gram^-1`` where ``gram`` averages z_t z_t' and
``score_cov`` averages the squared-residual-weighted outer products
(heteroskedasticity-robust by default). Penalized estimates of active
coefficients carry a deterministic shrinkage shift; the explicit
de-shrinkage term computed here recenters their confidence intervals.

Tests of a single coefficient compare sqrt(n) * |estimate - hypothesized|
against the unpenalized critical value, which dominates the penalized
limit-law quantiles at every penalty level and therefore keeps the test
conservative regardless of tuning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._normal import two_sided_critical
from .dataset import TimeSeriesDataset
from .errors import ConvergenceError, SingularDesignError
from .estimators import CONDITION_CAP, FitResult, PenaltySpec, coordinate_descent

DEFAULT_QUANTILE_DRAWS = 100_000


@dataclass(frozen=True)
class MomentEstimates:
    """Sample second-moment matrices on a column subset.

    ``gram`` is the averaged design Gram, ``score_cov`` the averaged
    squared-residual-weighted Gram, and ``sandwich`` their composition
    gram^-1 @ score_cov @ gram^-1. ``indices`` records the design columns
    the matrices refer to (all columns for the full model).
    """

    gram: np.ndarray
    score_cov: np.ndarray
    sandwich: np.ndarray
    indices: tuple[int, ...]
    robust: bool = True
    n: int = 0

    def position_of(self, index: int) -> int:
        try:
            return self.indices.index(index)
        except ValueError:
            raise ValueError(f"column {index} is not covered by these moments") from None

    def variance_of(self, index: int) -> float:
        k = self.position_of(index)
        return float(self.sandwich[k, k])


def estimate_moments(
    data: TimeSeriesDataset,
    residuals: np.ndarray,
    indices: tuple[int, ...] | None = None,
    robust: bool = True,
) -> MomentEstimates:
    """Second-moment estimates from the design and a residual vector.

    Parameters
    ----------
    indices : tuple of int, optional
        Restrict to these design columns (e.g. an active set); the full
        column range when omitted.
    robust : bool
        Heteroskedasticity-robust score covariance when true; otherwise the
        homoskedastic form (rss/n) * gram.
    """
    residuals = np.asarray(residuals, dtype=float)
    if residuals.shape != (data.n,):
        raise ValueError(f"expected {data.n} residuals, got {residuals.shape}")
    if indices is None:
        indices = tuple(range(data.p))
    cols = np.asarray(indices, dtype=int)
    z = data.design[:, cols]
    n = data.n
    gram = (z.T @ z) / n
    sv = np.linalg.svd(gram, compute_uv=False)
    if sv[-1] <= 0 or sv[0] / sv[-1] > CONDITION_CAP:
        raise SingularDesignError(
            f"moment matrix is numerically singular (condition > {CONDITION_CAP:g})"
        )
    if robust:
        zw = z * residuals[:, None]
        score_cov = (zw.T @ zw) / n
    else:
        score_cov = float(residuals @ residuals) / n * gram
    inner = np.linalg.solve(gram, score_cov)
    sandwich = np.linalg.solve(gram, inner.T).T
    sandwich = 0.5 * (sandwich + sandwich.T)
    return MomentEstimates(
        gram=gram,
        score_cov=score_cov,
        sandwich=sandwich,
        indices=tuple(int(i) for i in indices),
        robust=robust,
        n=n,
    )


@dataclass(frozen=True)
class BiasCorrection:
    """De-shrinkage shift for the active coefficients, on the sqrt(n) scale.

    ``shift[k]`` solves the active-set Gram system against
    lam / (2 sqrt(n)) * weight_k * sign_k, so dividing by sqrt(n) gives the
    amount by which the penalized estimate is pulled back toward the
    unpenalized one. Identically zero when the penalty level is zero.
    """

    shift: np.ndarray
    active_set: tuple[int, ...]
    lam: float
    weights: np.ndarray
    signs: np.ndarray


def bias_correction(
    fit: FitResult, data: TimeSeriesDataset, penalty: PenaltySpec | None = None
) -> BiasCorrection:
    """Compute the de-shrinkage shift for a penalized fit's active set."""
    if fit.method != "adaptive_lasso":
        raise ValueError("bias correction applies to penalized fits")
    penalty = penalty if penalty is not None else fit.penalty
    if penalty is None:
        raise ValueError("a penalty specification is required")
    active = fit.active_set
    if not active:
        empty = np.empty(0)
        return BiasCorrection(
            shift=empty, active_set=(), lam=penalty.lam, weights=empty, signs=empty
        )
    cols = np.asarray(active, dtype=int)
    z = data.design[:, cols]
    n = data.n
    gram = (z.T @ z) / n
    sv = np.linalg.svd(gram, compute_uv=False)
    if sv[-1] <= 0 or sv[0] / sv[-1] > CONDITION_CAP:
        raise SingularDesignError("active-set moment matrix is numerically singular")
    weights = penalty.weights[cols]
    signs = np.sign(fit.coef[cols])
    rhs = penalty.lam / (2.0 * math.sqrt(n)) * weights * signs
    shift = np.linalg.solve(gram, rhs)
    return BiasCorrection(
        shift=shift, active_set=active, lam=penalty.lam, weights=weights, signs=signs
    )


@dataclass(frozen=True)
class InferenceRow:
    """Per-coefficient inference record; unused fields stay None."""

    name: str
    index: int
    estimate: float
    center: float | None = None
    std_error: float | None = None
    ci_lower: float | None = None
    ci_upper: float | None = None
    test_stat: float | None = None
    critical_value: float | None = None
    reject: bool | None = None


@dataclass(frozen=True)
class InferenceReport:
    rows: tuple[InferenceRow, ...]
    alpha: float
    bias_corrected: bool

    def row_for(self, index: int) -> InferenceRow:
        for row in self.rows:
            if row.index == index:
                return row
        raise KeyError(index)


def confidence_interval(
    fit: FitResult,
    moments: MomentEstimates,
    bias: BiasCorrection | None = None,
    alpha: float = 0.05,
    names: tuple[str, ...] | None = None,
) -> InferenceReport:
    """Normal confidence intervals for the active coefficients.

    ``moments`` is either the active-set restriction computed from the
    penalized fit's own residuals, or any covering set (e.g. the full
    model); every active index must be covered. When ``bias`` is supplied
    the interval center moves from the raw estimate to
    estimate + shift/sqrt(n); the width is unchanged.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    missing = [i for i in fit.active_set if i not in moments.indices]
    if missing:
        raise ValueError(f"moments do not cover active column(s) {missing}")
    if bias is not None and bias.active_set != fit.active_set:
        raise ValueError("bias correction does not match the fit's active set")
    z = two_sided_critical(alpha)
    n = moments.n
    rows = []
    for k, index in enumerate(fit.active_set):
        estimate = float(fit.coef[index])
        center = estimate
        if bias is not None and bias.active_set:
            center = estimate + float(bias.shift[k]) / math.sqrt(n)
        se = math.sqrt(moments.variance_of(index) / n)
        rows.append(
            InferenceRow(
                name=names[index] if names is not None else f"c{index}",
                index=index,
                estimate=estimate,
                center=center,
                std_error=se,
                ci_lower=center - z * se,
                ci_upper=center + z * se,
            )
        )
    return InferenceReport(rows=tuple(rows), alpha=alpha, bias_corrected=bias is not None)


def coefficient_test(
    fit: FitResult,
    moments: MomentEstimates,
    hypothesized: float,
    index: int,
    alpha: float = 0.05,
    name: str | None = None,
    dof: int = 0,
) -> InferenceRow:
    """Two-sided test of one coefficient against a hypothesized value.

    The statistic is sqrt(n) * |estimate - hypothesized|; the critical
    value is the |N(0, V_ii)| quantile from the full-model sandwich, which
    upper-bounds the penalized limit-law quantile at every penalty level.
    A positive ``dof`` applies the small-sample inflation sqrt(n/(n-dof))
    to the critical value (typically dof = number of design columns).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    n = moments.n
    if not 0 <= dof < n:
        raise ValueError(f"dof must lie in [0, n), got {dof}")
    stat = math.sqrt(n) * abs(float(fit.coef[index]) - hypothesized)
    critical = two_sided_critical(alpha) * math.sqrt(
        moments.variance_of(index) * n / (n - dof)
    )
    return InferenceRow(
        name=name if name is not None else f"c{index}",
        index=index,
        estimate=float(fit.coef[index]),
        std_error=math.sqrt(moments.variance_of(index) / n),
        test_stat=stat,
        critical_value=critical,
        reject=stat > critical,
    )


@dataclass(frozen=True)
class LimitDistSpec:
    """Inputs for simulating the penalized limit law.

    The random objective per draw is -2 u'W + u'gram u + sum_i pen_i |u_i|
    with W drawn N(0, noise_cov); its minimizer's distribution is the limit
    law of the scaled estimation error at fixed penalty.
    """

    gram: np.ndarray
    noise_cov: np.ndarray
    penalties: np.ndarray
    seed: int
    draws: int = DEFAULT_QUANTILE_DRAWS

    def __post_init__(self) -> None:
        gram = np.atleast_2d(np.asarray(self.gram, dtype=float))
        noise = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        pen = np.atleast_1d(np.asarray(self.penalties, dtype=float))
        p = gram.shape[0]
        if gram.shape != (p, p) or noise.shape != (p, p) or pen.shape != (p,):
            raise ValueError("gram, noise_cov, and penalties have inconsistent shapes")
        if np.any(pen < 0):
            raise ValueError("penalties must be nonnegative")
        if np.any(np.linalg.eigvalsh(gram) <= 0):
            raise ValueError("gram must be positive definite")
        object.__setattr__(self, "gram", gram)
        object.__setattr__(self, "noise_cov", noise)
        object.__setattr__(self, "penalties", pen)
        if self.draws < 1000:
            raise ValueError("at least 1000 draws are required")

    @property
    def p(self) -> int:
        return self.gram.shape[0]


def limit_quantiles(spec: LimitDistSpec, alpha: float = 0.05) -> np.ndarray:
    """Per-coordinate 1 - alpha quantiles of |argmin| of the random objective.

    Each draw samples W from N(0, noise_cov) through a Cholesky factor and
    minimizes the quadratic-plus-L1 objective with the same coordinate
    descent solver used for model fitting. With a fixed seed the W draws
    are identical across calls, so quantiles computed on an ascending
    penalty grid share common random numbers.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    try:
        factor = np.linalg.cholesky(spec.noise_cov)
    except np.linalg.LinAlgError as exc:
        raise SingularDesignError(f"noise covariance factorization failed: {exc}") from exc
    rng = np.random.Generator(np.random.Philox(key=[spec.seed & (2**64 - 1), 0]))
    w = rng.standard_normal((spec.draws, spec.p)) @ factor.T
    solutions, _, converged = coordinate_descent(spec.gram, w, spec.penalties)
    if not converged:
        raise ConvergenceError("limit-law minimization did not converge")
    magnitudes = np.abs(solutions)
    return np.quantile(magnitudes, 1.0 - alpha, axis=0)

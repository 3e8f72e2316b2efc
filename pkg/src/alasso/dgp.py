"""Reproducible data-generating processes for the simulation studies.

Every process iterates the lagged regression recursion with configurable
error distributions (Gaussian, heavy-tailed Student t, or conditionally
heteroskedastic GARCH) and optionally correlated covariates. Generation is
a pure function of the configuration: the counter-based Philox generator is
keyed by (master seed, stream), so parallel replications draw independent,
reproducible substreams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import ModelSpec, RawSeriesTable, TimeSeriesDataset, build_design

RNG_IDENTITY = "numpy-philox4x64"
DEFAULT_BURN_IN = 500
CORR_FIXTURE_VERSION = "block-v2"


def rng_for(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for a (seed, stream) pair."""
    mask = (1 << 64) - 1
    key = [int(seed) & mask, int(stream) & mask]
    return np.random.Generator(np.random.Philox(key=key))


def student_t_draw(rng: np.random.Generator, nu: float, size=None):
    """Student t with ``nu`` degrees of freedom, not variance-standardized.

    Built as standard normal over sqrt(chi-square / nu); the variance is
    nu / (nu - 2), e.g. 5/3 at nu = 5.
    """
    if nu <= 2:
        raise ValueError(f"degrees of freedom must exceed 2, got {nu}")
    z = rng.standard_normal(size)
    v = rng.chisquare(nu, size)
    return z / np.sqrt(v / nu)


def correlated_normals(rng: np.random.Generator, corr: np.ndarray, size: int | None = None):
    """Standard normal vector(s) with the given correlation matrix."""
    corr = np.asarray(corr, dtype=float)
    try:
        factor = np.linalg.cholesky(corr)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"correlation matrix is not positive definite: {exc}") from exc
    k = corr.shape[0]
    shape = (k,) if size is None else (size, k)
    return rng.standard_normal(shape) @ factor.T


@dataclass(frozen=True)
class GaussianErrors:
    kind: str = field(default="gaussian", init=False)

    def second_moment(self) -> float:
        return 1.0


@dataclass(frozen=True)
class StudentTErrors:
    df: float = 5.0
    kind: str = field(default="student_t", init=False)

    def __post_init__(self) -> None:
        if self.df <= 2:
            raise ValueError("degrees of freedom must exceed 2")

    def second_moment(self) -> float:
        return self.df / (self.df - 2.0)


@dataclass(frozen=True)
class GarchErrors:
    """Conditional-variance recursion h_t = omega + beta*h + alpha*h*e^2.

    ``innovation`` is the distribution of e_t ("gaussian" or "student_t"
    with ``df`` degrees of freedom). Covariance stationarity requires
    beta + alpha * E[e^2] < 1; the recursion starts from the implied
    unconditional variance with a zero previous innovation.
    """

    omega: float = 0.1
    beta: float = 0.7
    alpha: float = 0.1
    innovation: str = "student_t"
    df: float = 5.0
    kind: str = field(default="garch", init=False)

    def innovation_second_moment(self) -> float:
        if self.innovation == "gaussian":
            return 1.0
        if self.innovation == "student_t":
            return self.df / (self.df - 2.0)
        raise ValueError(f"unknown innovation kind {self.innovation!r}")

    def persistence(self) -> float:
        return self.beta + self.alpha * self.innovation_second_moment()

    def unconditional_variance(self) -> float:
        return self.omega / (1.0 - self.persistence())

    def second_moment(self) -> float:
        # E[eps^2] = E[h] * E[e^2]
        return self.unconditional_variance() * self.innovation_second_moment()

    def validate(self) -> None:
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if self.beta < 0 or self.alpha < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.innovation == "student_t" and self.df <= 2:
            raise ValueError("innovation degrees of freedom must exceed 2")
        if self.persistence() >= 1.0:
            raise ValueError(
                f"variance recursion is nonstationary: beta + alpha*E[e^2] = "
                f"{self.persistence():.4f} >= 1"
            )


ErrorKind = GaussianErrors | StudentTErrors | GarchErrors


@dataclass
class GarchState:
    """Running conditional variance and previous innovation; h stays positive."""

    h: float
    e_prev: float = 0.0

    def advance(self, errors: GarchErrors) -> float:
        self.h = errors.omega + self.h * (errors.beta + errors.alpha * self.e_prev**2)
        assert self.h > 0.0
        return self.h


@dataclass(frozen=True)
class DgpConfig:
    """Complete, serializable description of one simulated process."""

    model: ModelSpec
    coef_true: np.ndarray
    errors: ErrorKind
    n: int
    seed: int
    stream: int = 0
    burn_in: int = DEFAULT_BURN_IN
    covariate_corr: np.ndarray | None = None
    corr_fixture: str | None = None

    def __post_init__(self) -> None:
        coef = np.asarray(self.coef_true, dtype=float).copy()
        coef.flags.writeable = False
        object.__setattr__(self, "coef_true", coef)

    def validate(self) -> None:
        model = self.model
        coef = self.coef_true
        if coef.shape != (model.p,):
            raise ValueError(f"expected {model.p} true coefficients, got {coef.shape}")
        if self.n <= model.p:
            raise ValueError("sample size must exceed the number of columns")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")
        if model.p1 > 0:
            ar = coef[: model.p1]
            # roots of 1 - a_1 z - ... - a_p1 z^p1 must lie outside the unit circle
            poly = np.concatenate(([1.0], -ar))[::-1]
            if np.any(ar != 0.0):
                roots = np.roots(poly)
                if np.any(np.abs(roots) <= 1.0 + 1e-12):
                    raise ValueError("autoregressive polynomial has a root inside the unit circle")
        if isinstance(self.errors, GarchErrors):
            self.errors.validate()
        if self.covariate_corr is not None:
            corr = np.asarray(self.covariate_corr, dtype=float)
            if corr.shape != (model.p2, model.p2):
                raise ValueError("covariate correlation must be p2 x p2")
            if not np.allclose(corr, corr.T):
                raise ValueError("covariate correlation must be symmetric")
            if np.any(np.linalg.eigvalsh(corr) <= 0):
                raise ValueError("covariate correlation must be positive definite")

    @property
    def active_set(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.coef_true != 0.0))


def _draw_errors(rng: np.random.Generator, errors: ErrorKind, t_total: int) -> np.ndarray:
    if isinstance(errors, GaussianErrors):
        return rng.standard_normal(t_total)
    if isinstance(errors, StudentTErrors):
        return np.asarray(student_t_draw(rng, errors.df, t_total))
    if isinstance(errors, GarchErrors):
        if errors.innovation == "gaussian":
            e = rng.standard_normal(t_total)
        else:
            e = np.asarray(student_t_draw(rng, errors.df, t_total))
        out = np.empty(t_total)
        state = GarchState(h=errors.unconditional_variance(), e_prev=0.0)
        for t in range(t_total):
            if t > 0:
                state.advance(errors)
            out[t] = math.sqrt(state.h) * e[t]
            state.e_prev = float(e[t])
        return out
    raise TypeError(f"unknown error kind: {errors!r}")


def simulate_raw(config: DgpConfig) -> RawSeriesTable:
    """Generate the raw series table; bit-for-bit determined by (seed, stream).

    Draw order is part of the stream contract: covariates first, then
    lagged predictors, then the error sequence. Pre-sample values of the
    response and predictors are zero and the first ``burn_in`` steps are
    discarded; the table keeps exactly enough lead-in rows for the lag
    structure to produce ``config.n`` effective observations.
    """
    config.validate()
    model = config.model
    rng = rng_for(config.seed, config.stream)
    t_total = config.burn_in + config.n + max(model.p1, 1)

    if model.p2:
        if config.covariate_corr is not None:
            w = np.asarray(correlated_normals(rng, config.covariate_corr, t_total))
        else:
            w = rng.standard_normal((t_total, model.p2))
    else:
        w = np.empty((t_total, 0))
    x = rng.standard_normal((t_total, model.p3)) if model.p3 else np.empty((t_total, 0))
    eps = _draw_errors(rng, config.errors, t_total)

    ar = config.coef_true[: model.p1]
    gam = config.coef_true[model.p1 : model.p1 + model.p2]
    bet = config.coef_true[model.p1 + model.p2 :]

    drive = eps.copy()
    if model.p2:
        drive += w @ gam
    if model.p3:
        x_lag = np.vstack([np.zeros((1, model.p3)), x[:-1]])
        drive += x_lag @ bet

    if model.p1 and np.any(ar != 0.0):
        y = np.empty(t_total)
        ar_list = [float(a) for a in ar]
        p1 = model.p1
        for t in range(t_total):
            acc = drive[t]
            for i, a in enumerate(ar_list, start=1):
                if t - i >= 0:
                    acc += a * y[t - i]
            y[t] = acc
    else:
        y = drive

    keep = slice(config.burn_in, None)
    return RawSeriesTable(
        names=("y",)
        + tuple(f"w{i}" for i in range(1, model.p2 + 1))
        + tuple(f"x{i}" for i in range(1, model.p3 + 1)),
        values=np.column_stack([y[keep], w[keep], x[keep]]),
    )


def simulate(config: DgpConfig) -> TimeSeriesDataset:
    """Generate one aligned dataset from the configured process."""
    raw = simulate_raw(config)
    origin = f"dgp:seed={config.seed}:stream={config.stream}"
    return build_design(raw, config.model, origin=origin)


def setting5_correlation() -> np.ndarray:
    """Versioned 20x20 covariate correlation fixture (block-v2).

    Block design over the covariates, every entry drawn from
    {-0.5, 0, 0.5, 0.9}: the two strongest contributing covariates form a
    0.9 pair, the next four contributing ones two 0.5 pairs, four inert
    covariates a second 0.9 block, and four more a signed +/-0.5 block
    (a 0.5 equicorrelation block with alternating sign flips, which keeps
    the matrix positive definite while adjacent pairs correlate at -0.5).
    Everything else is uncorrelated. Pair blocks on the contributing
    covariates keep their standard errors moderate, so tests of their zero
    nulls retain near-universal power at these sample sizes.
    """
    corr = np.eye(20)

    def equi_block(idx, rho: float, signs=None) -> None:
        idx = np.asarray(idx)
        block = np.full((len(idx), len(idx)), rho)
        np.fill_diagonal(block, 1.0)
        if signs is not None:
            d = np.diag(signs)
            block = d @ block @ d
            np.fill_diagonal(block, 1.0)
        corr[np.ix_(idx, idx)] = block

    equi_block([0, 1], 0.9)
    equi_block([2, 3], 0.5)
    equi_block([4, 5], 0.5)
    equi_block([6, 7, 8, 9], 0.9)
    equi_block([10, 11, 12, 13], 0.5, signs=np.array([1.0, -1.0, 1.0, -1.0]))
    if np.any(np.linalg.eigvalsh(corr) <= 0):
        raise AssertionError("correlation fixture must be positive definite")
    return corr


def _small_model_coefs() -> tuple[ModelSpec, np.ndarray]:
    model = ModelSpec(p1=5, p2=5, p3=5)
    coef = np.zeros(15)
    coef[[0, 1]] = [0.3, 0.1]    # response lags
    coef[[5, 6]] = [0.3, 0.1]    # covariates
    coef[[10, 11]] = [0.3, 0.1]  # lagged predictors
    return model, coef


def _wide_model_coefs() -> tuple[ModelSpec, np.ndarray]:
    model = ModelSpec(p1=1, p2=20, p3=0)
    coef = np.zeros(21)
    coef[0] = 0.9
    coef[1:7] = [0.6, 0.5, 0.4, 0.3, 0.2, 0.1]
    return model, coef


def setting1(n: int, seed: int = 0) -> DgpConfig:
    """Gaussian errors, 15 candidate variables, 6 active."""
    model, coef = _small_model_coefs()
    return DgpConfig(model=model, coef_true=coef, errors=GaussianErrors(), n=n, seed=seed)


def setting2(n: int, seed: int = 0) -> DgpConfig:
    """Heavy-tailed Student-t(5) errors, same coefficients as setting 1."""
    model, coef = _small_model_coefs()
    return DgpConfig(model=model, coef_true=coef, errors=StudentTErrors(df=5.0), n=n, seed=seed)


def setting3(n: int, seed: int = 0) -> DgpConfig:
    """GARCH errors with t(5) innovations, same coefficients as setting 1."""
    model, coef = _small_model_coefs()
    return DgpConfig(model=model, coef_true=coef, errors=GarchErrors(), n=n, seed=seed)


def setting4(n: int, seed: int = 0) -> DgpConfig:
    """Persistent response, 20 covariates of graded strength, Gaussian errors."""
    model, coef = _wide_model_coefs()
    return DgpConfig(model=model, coef_true=coef, errors=GaussianErrors(), n=n, seed=seed)


def setting5(n: int, seed: int = 0) -> DgpConfig:
    """Setting 4 with correlated covariates and GARCH errors."""
    model, coef = _wide_model_coefs()
    return DgpConfig(
        model=model,
        coef_true=coef,
        errors=GarchErrors(),
        n=n,
        seed=seed,
        covariate_corr=setting5_correlation(),
        corr_fixture=CORR_FIXTURE_VERSION,
    )


PRESETS = {
    "setting1": setting1,
    "setting2": setting2,
    "setting3": setting3,
    "setting4": setting4,
    "setting5": setting5,
}


def with_stream(config: DgpConfig, stream: int) -> DgpConfig:
    """Copy of the configuration bound to a replication substream."""
    return replace(config, stream=stream)

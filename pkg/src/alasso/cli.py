"""Command-line interface: fit, test, mc, and quantile-curve.

Every run resolves its inputs into a flat key = value snapshot written next
to the other artifacts; re-running from that snapshot reproduces the
artifacts byte for byte. Exit codes: 0 success, 2 usage, 3 data/IO,
4 rank deficiency, 5 convergence failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import dgp as dgp_mod
from ._normal import two_sided_critical
from .dataset import (
    ColumnMapping,
    ModelSpec,
    TimeSeriesDataset,
    build_design,
    expand_variable_names,
    read_csv,
)
from .errors import ConvergenceError, DataError, SingularDesignError
from .estimators import PenaltySpec, adaptive_lasso_fit, fit_path, ols_fit
from .inference import (
    LimitDistSpec,
    bias_correction,
    coefficient_test,
    confidence_interval,
    estimate_moments,
    limit_quantiles,
)
from .mc import DEFAULT_LAM_SCALE, McExperiment, format_float, render_table, run_experiment

EXIT_OK = 0
EXIT_DATA = 3
EXIT_RANK = 4
EXIT_CONVERGENCE = 5


@dataclass
class RunConfig:
    """Resolved configuration as ordered sections of string key/value pairs."""

    sections: dict[str, dict[str, str]]

    def write(self, path: str) -> None:
        lines = []
        for name, entries in self.sections.items():
            lines.append(f"[{name}]")
            for key, value in entries.items():
                lines.append(f"{key} = {value}")
            lines.append("")
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write("\n".join(lines))

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        sections: dict[str, dict[str, str]] = {}
        current: dict[str, str] | None = None
        try:
            with open(path, "r", encoding="utf-8") as handle:
                for lineno, raw in enumerate(handle, start=1):
                    line = raw.strip()
                    if not line or line.startswith("#"):
                        continue
                    if line.startswith("[") and line.endswith("]"):
                        current = {}
                        sections[line[1:-1]] = current
                        continue
                    if "=" not in line or current is None:
                        raise DataError(f"'{path}' line {lineno}: expected key = value")
                    key, _, value = line.partition("=")
                    current[key.strip()] = value.strip()
        except OSError as exc:
            raise DataError(f"cannot read config '{path}': {exc}") from exc
        return cls(sections=sections)


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(text)


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("ALASSO_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise DataError(f"ALASSO_SEED must be an integer, got {env!r}") from None
    raise DataError("a seed is required (--seed or ALASSO_SEED)")


def _comma_list(text: str | None) -> tuple[str, ...]:
    if not text:
        return ()
    return tuple(part.strip() for part in text.split(",") if part.strip())


def _stars(stat: float, variance: float) -> str:
    marks = ""
    for count, level in enumerate((0.10, 0.05, 0.01), start=1):
        if stat > two_sided_critical(level) * math.sqrt(variance):
            marks = "*" * count
    return marks


# ---------------------------------------------------------------------------
# fit / test
# ---------------------------------------------------------------------------


def _load_dataset(args) -> TimeSeriesDataset:
    schema = ColumnMapping(
        response=args.response,
        covariates=_comma_list(args.covariates),
        predictors=_comma_list(args.predictors),
        date=args.date_column,
    )
    raw = read_csv(args.data, schema)
    names = expand_variable_names(
        args.response, schema.covariates, schema.predictors, args.lags
    )
    spec = ModelSpec(
        p1=args.lags,
        p2=len(schema.covariates),
        p3=len(schema.predictors),
        include_intercept=args.intercept,
        variable_names=names,
    )
    data = build_design(raw, spec, origin=args.data)
    if args.standardize:
        scales = data.design.std(axis=0, ddof=0)
        if np.any(scales == 0.0):
            bad = [data.names[j] for j in np.flatnonzero(scales == 0.0)]
            raise SingularDesignError(f"constant column(s) cannot be standardized: {', '.join(bad)}")
        data = TimeSeriesDataset(
            y=data.y,
            design=data.design / scales,
            names=data.names,
            origin=data.origin,
            y_mean=data.y_mean,
            design_means=data.design_means,
            design_scales=scales,
        )
    return data


def _fit_pipeline(args, data: TimeSeriesDataset):
    """Shared by fit and test: pilot fit, penalized fit, full-model moments."""
    if args.lam is not None:
        pilot = ols_fit(data)
        penalty = PenaltySpec.from_pilot(pilot.coef, args.lam)
        fit = adaptive_lasso_fit(data, penalty, init=pilot.coef)
        lam = args.lam
        tuning = f"fixed lambda = {format_float(lam)}"
    else:
        path = fit_path(data, grid_size=args.grid_size)
        pilot = path.pilot
        fit = path.selected_fit
        lam = path.selected_lam
        tuning = (
            f"BIC-selected lambda = {format_float(lam)} "
            f"over {args.grid_size}-point grid on [0, n^0.25]"
        )
    if not fit.converged:
        raise ConvergenceError("penalized fit did not converge")
    moments = estimate_moments(data, pilot.residuals, robust=not args.classical)
    return pilot, fit, lam, tuning, moments


def _fit_report(args, data: TimeSeriesDataset) -> str:
    pilot, fit, _, tuning, moments = _fit_pipeline(args, data)
    n = data.n
    alpha = args.alpha

    ci_rows = {}
    if fit.active_set:
        active_moments = estimate_moments(
            data, fit.residuals, indices=fit.active_set, robust=not args.classical
        )
        bias = None
        if not args.no_bias_correction:
            bias = bias_correction(fit, data, fit.penalty)
        report = confidence_interval(
            fit, active_moments, bias=bias, alpha=alpha, names=data.names
        )
        ci_rows = {row.index: row for row in report.rows}

    scales = data.design_scales if data.design_scales is not None else np.ones(data.p)
    header = (
        f"{'variable':<42}{'al_estimate':>16}{'std_error':>14}"
        f"{'ls_estimate':>16}{'ci_low':>14}{'ci_high':>14}"
    )
    lines = [
        f"penalized fit of '{data.origin}' (n={n}, p={data.p})",
        f"tuning: {tuning}",
        f"covariance: {'classical' if args.classical else 'robust sandwich'}; "
        f"alpha = {alpha:g}",
    ]
    if data.y_mean is not None:
        means = data.design_means if data.design_means is not None else np.zeros(data.p)
        intercept = data.y_mean - float((fit.coef / scales) @ means)
        lines.append(f"intercept (unpenalized, recovered): {intercept:.6f}")
    lines += ["", header]
    for j, name in enumerate(data.names):
        al = fit.coef[j] / scales[j]
        ls = pilot.coef[j] / scales[j]
        se = math.sqrt(moments.variance_of(j) / n) / scales[j]
        al_test = coefficient_test(fit, moments, 0.0, j, alpha=alpha)
        al_mark = _stars(al_test.test_stat, moments.variance_of(j))
        ls_stat = math.sqrt(n) * abs(pilot.coef[j])
        ls_mark = _stars(ls_stat, moments.variance_of(j))
        al_text = "0" if fit.coef[j] == 0.0 else f"{al:.6f}{al_mark}"
        ls_text = f"{ls:.6f}{ls_mark}"
        if j in ci_rows:
            row = ci_rows[j]
            lo = f"{row.ci_lower / scales[j]:.6f}"
            hi = f"{row.ci_upper / scales[j]:.6f}"
        else:
            lo = hi = "--"
        lines.append(
            f"{name:<42}{al_text:>16}{se:>14.6f}{ls_text:>16}{lo:>14}{hi:>14}"
        )
    lines.append("")
    lines.append("stars: * 10%, ** 5%, *** 1% (zero-null test at each level)")
    return "\n".join(lines) + "\n"


def _data_sections(args, command: str) -> dict[str, dict[str, str]]:
    return {
        "run": {
            "command": command,
            "alpha": format_float(args.alpha),
            "grid_size": str(args.grid_size),
            "lambda": "auto" if args.lam is None else format_float(args.lam),
            "bias_correction": "off" if args.no_bias_correction else "on",
            "covariance": "classical" if args.classical else "robust",
            "intercept": str(args.intercept).lower(),
            "standardize": str(args.standardize).lower(),
        },
        "data": {
            "path": args.data,
            "response": args.response,
            "covariates": args.covariates or "",
            "predictors": args.predictors or "",
            "date_column": args.date_column or "",
            "lags": str(args.lags),
        },
    }


def cmd_fit(args) -> int:
    data = _load_dataset(args)
    report = _fit_report(args, data)
    os.makedirs(args.out, exist_ok=True)
    _write_text(os.path.join(args.out, "report.txt"), report)
    RunConfig(_data_sections(args, "fit")).write(os.path.join(args.out, "config.snapshot"))
    sys.stdout.write(report)
    return EXIT_OK


def cmd_test(args) -> int:
    data = _load_dataset(args)
    try:
        index = int(args.index)
    except ValueError:
        if args.index not in data.names:
            raise DataError(f"unknown variable {args.index!r}") from None
        index = data.names.index(args.index)
    if not 0 <= index < data.p:
        raise DataError(f"index {index} outside 0..{data.p - 1}")
    _, fit, _, tuning, moments = _fit_pipeline(args, data)
    row = coefficient_test(
        fit, moments, args.theta0, index, alpha=args.alpha, name=data.names[index]
    )
    lines = [
        f"test of {row.name} = {format_float(args.theta0)} (alpha = {args.alpha:g})",
        f"tuning: {tuning}",
        f"estimate = {row.estimate:.6f}",
        f"statistic = {row.test_stat:.6f}",
        f"critical value = {row.critical_value:.6f}",
        f"decision: {'reject' if row.reject else 'do not reject'}",
    ]
    report = "\n".join(lines) + "\n"
    os.makedirs(args.out, exist_ok=True)
    _write_text(os.path.join(args.out, "report.txt"), report)
    sections = _data_sections(args, "test")
    sections["run"]["index"] = str(index)
    sections["run"]["theta0"] = format_float(args.theta0)
    RunConfig(sections).write(os.path.join(args.out, "config.snapshot"))
    sys.stdout.write(report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# mc
# ---------------------------------------------------------------------------


def _errors_sections(errors) -> dict[str, str]:
    if isinstance(errors, dgp_mod.GaussianErrors):
        return {"kind": "gaussian"}
    if isinstance(errors, dgp_mod.StudentTErrors):
        return {"kind": "student_t", "df": format_float(errors.df)}
    return {
        "kind": "garch",
        "omega": format_float(errors.omega),
        "beta": format_float(errors.beta),
        "alpha": format_float(errors.alpha),
        "innovation": errors.innovation,
        "df": format_float(errors.df),
    }


def _errors_from_section(section: dict[str, str]) -> dgp_mod.ErrorKind:
    kind = section.get("kind", "gaussian")
    if kind == "gaussian":
        return dgp_mod.GaussianErrors()
    if kind == "student_t":
        return dgp_mod.StudentTErrors(df=float(section.get("df", "5")))
    if kind == "garch":
        return dgp_mod.GarchErrors(
            omega=float(section.get("omega", "0.1")),
            beta=float(section.get("beta", "0.7")),
            alpha=float(section.get("alpha", "0.1")),
            innovation=section.get("innovation", "student_t"),
            df=float(section.get("df", "5")),
        )
    raise DataError(f"unknown error kind {kind!r}")


def _dgp_sections(config: dgp_mod.DgpConfig, preset: str | None) -> dict[str, dict[str, str]]:
    model = config.model
    return {
        "dgp": {
            "preset": preset or "custom",
            "p1": str(model.p1),
            "p2": str(model.p2),
            "p3": str(model.p3),
            "coef": ",".join(format_float(c) for c in config.coef_true),
            "burn_in": str(config.burn_in),
            "corr_fixture": config.corr_fixture or "none",
        },
        "errors": _errors_sections(config.errors),
    }


def _dgp_from_sections(sections: dict[str, dict[str, str]], n: int, seed: int) -> dgp_mod.DgpConfig:
    dgp_sec = sections.get("dgp", {})
    errors = _errors_from_section(sections.get("errors", {}))
    model = ModelSpec(
        p1=int(dgp_sec.get("p1", "0")),
        p2=int(dgp_sec.get("p2", "0")),
        p3=int(dgp_sec.get("p3", "0")),
    )
    coef = np.array([float(c) for c in dgp_sec.get("coef", "").split(",")])
    fixture = dgp_sec.get("corr_fixture", "none")
    corr = None
    if fixture != "none":
        if fixture != dgp_mod.CORR_FIXTURE_VERSION:
            raise DataError(f"unknown correlation fixture {fixture!r}")
        corr = dgp_mod.setting5_correlation()
    return dgp_mod.DgpConfig(
        model=model,
        coef_true=coef,
        errors=errors,
        n=n,
        seed=seed,
        burn_in=int(dgp_sec.get("burn_in", str(dgp_mod.DEFAULT_BURN_IN))),
        covariate_corr=corr,
        corr_fixture=None if corr is None else fixture,
    )


def cmd_mc(args) -> int:
    loaded = RunConfig.load(args.config).sections if args.config else None

    def fallback(key: str, current, cast):
        if current is not None:
            return current
        if loaded and key in loaded.get("run", {}):
            return cast(loaded["run"][key])
        return None

    n = fallback("n", args.n, int)
    replications = fallback("replications", args.replications, int)
    seed = fallback("seed", args.seed, int)
    alpha = fallback("alpha", args.alpha, float) or 0.05
    grid_size = fallback("grid_size", args.grid_size, int) or 100
    workers = fallback("workers", args.workers, int) or 1
    bias = fallback("bias_correction", args.bias, str) or "both"
    tuning = fallback("tuning", args.tuning, str) or "fixed"
    lam_scale = fallback("lambda_scale", args.lam_scale, float)
    if lam_scale is None:
        lam_scale = DEFAULT_LAM_SCALE
    ci_variance = fallback("ci_variance", args.ci_variance, str) or "full"
    if args.no_bias_correction:
        bias = "off"
    preset = args.preset or (loaded["dgp"].get("preset") if loaded else None)
    if n is None or replications is None:
        raise DataError("mc requires --n and --N (or a config that sets them)")
    seed = _resolve_seed(seed)

    if args.preset is not None or loaded is None:
        if preset not in dgp_mod.PRESETS:
            raise DataError(
                f"unknown preset {preset!r}; choose from {', '.join(sorted(dgp_mod.PRESETS))}"
            )
        config = dgp_mod.PRESETS[preset](n, seed=seed)
    elif preset in dgp_mod.PRESETS:
        config = dgp_mod.PRESETS[preset](n, seed=seed)
    else:
        config = _dgp_from_sections(loaded, n, seed)

    exp = McExperiment(
        dgp=config,
        replications=replications,
        alpha=alpha,
        grid_size=grid_size,
        bias_mode=bias,
        tuning=tuning,
        lam_scale=lam_scale,
        ci_variance=ci_variance,
    )
    summary = run_experiment(exp, workers=workers)

    os.makedirs(args.out, exist_ok=True)
    for name, fmt in (("summary.csv", "csv"), ("panelA.txt", "panelA"), ("panelB.txt", "panelB")):
        _write_text(os.path.join(args.out, name), render_table(summary, fmt))
    sections = {
        "run": {
            "command": "mc",
            "n": str(n),
            "replications": str(replications),
            "seed": str(seed),
            "alpha": format_float(alpha),
            "grid_size": str(grid_size),
            "workers": str(workers),
            "bias_correction": bias,
            "tuning": tuning,
            "lambda_scale": format_float(lam_scale),
            "ci_variance": ci_variance,
            "rng": dgp_mod.RNG_IDENTITY,
            "rng_version": f"numpy-{np.__version__}",
        },
    }
    sections.update(_dgp_sections(config, preset))
    RunConfig(sections).write(os.path.join(args.out, "config.snapshot"))
    sys.stdout.write(render_table(summary, "panelA") + "\n" + render_table(summary, "panelB"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# quantile-curve
# ---------------------------------------------------------------------------


def _scalar_curve_point(task: tuple) -> float:
    lam0, draws, seed, alpha = task
    spec = LimitDistSpec(
        gram=np.array([[1.0]]),
        noise_cov=np.array([[1.0]]),
        penalties=np.array([lam0]),
        draws=draws,
        seed=seed,
    )
    return float(limit_quantiles(spec, alpha=alpha)[0])


def cmd_quantile_curve(args) -> int:
    seed = _resolve_seed(args.seed)
    if args.grid_step <= 0 or args.grid_max < 0:
        raise DataError("the penalty grid must have positive step and nonnegative max")
    steps = int(round(args.grid_max / args.grid_step))
    grid = [round(k * args.grid_step, 12) for k in range(steps + 1)]

    lines = ["lambda0,coordinate,quantile"]
    if args.data is not None:
        data = _load_dataset(args)
        _, fit, lam, _, moments = _fit_pipeline(args, data)
        assert fit.penalty is not None
        lam0 = lam * fit.penalty.weights / math.sqrt(data.n)
        spec = LimitDistSpec(
            gram=moments.gram,
            noise_cov=moments.score_cov,
            penalties=lam0,
            draws=args.draws,
            seed=seed,
        )
        quantiles = limit_quantiles(spec, alpha=args.alpha)
        for j in range(data.p):
            lines.append(
                f"{format_float(lam0[j])},{j},{format_float(quantiles[j])}"
            )
    else:
        tasks = [(lam0, args.draws, seed, args.alpha) for lam0 in grid]
        if args.workers and args.workers > 1:
            from multiprocessing import get_context

            with get_context("fork").Pool(processes=args.workers) as pool:
                quantiles = pool.map(_scalar_curve_point, tasks)
        else:
            quantiles = [_scalar_curve_point(task) for task in tasks]
        for lam0, q in zip(grid, quantiles):
            lines.append(f"{format_float(lam0)},0,{format_float(q)}")
    csv_text = "\n".join(lines) + "\n"

    os.makedirs(args.out, exist_ok=True)
    _write_text(os.path.join(args.out, "quantiles.csv"), csv_text)
    sections = {
        "run": {
            "command": "quantile-curve",
            "seed": str(seed),
            "draws": str(args.draws),
            "alpha": format_float(args.alpha),
            "grid_max": format_float(args.grid_max),
            "grid_step": format_float(args.grid_step),
            "data": args.data or "",
            "rng": dgp_mod.RNG_IDENTITY,
            "rng_version": f"numpy-{np.__version__}",
        }
    }
    RunConfig(sections).write(os.path.join(args.out, "config.snapshot"))
    sys.stdout.write(csv_text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_data_options(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("--data", required=required, help="CSV file with a header row")
    parser.add_argument("--response", required=required, help="response column name")
    parser.add_argument("--covariates", default=None, help="comma-separated contemporaneous columns")
    parser.add_argument("--predictors", default=None, help="comma-separated one-lag predictor columns")
    parser.add_argument("--date-column", dest="date_column", default=None)
    parser.add_argument("--lags", type=int, default=1, help="response lags in the design (default 1)")
    parser.add_argument("--intercept", action="store_true", help="mean-center and recover an intercept")
    parser.add_argument("--standardize", action="store_true", help="scale design columns to unit variance")


def _add_covariance_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--robust", dest="classical", action="store_false",
                       help="heteroskedasticity-robust sandwich covariance (default)")
    group.add_argument("--classical", dest="classical", action="store_true",
                       help="homoskedastic covariance instead of the robust sandwich")
    parser.set_defaults(classical=False)


def _add_fit_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha", type=float, default=0.05)
    parser.add_argument("--grid-size", dest="grid_size", type=int, default=100)
    parser.add_argument("--lambda", dest="lam", type=float, default=None,
                        help="fixed penalty level instead of BIC tuning")
    parser.add_argument("--no-bias-correction", action="store_true")
    _add_covariance_flags(parser)
    parser.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alasso",
        description="Adaptive-lasso estimation and inference for time-series regressions",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a CSV dataset and report estimates and tests")
    _add_data_options(fit)
    _add_fit_options(fit)
    fit.set_defaults(handler=cmd_fit)

    test = sub.add_parser("test", help="test one coefficient against a hypothesized value")
    _add_data_options(test)
    _add_fit_options(test)
    test.add_argument("--index", required=True, help="design column index or variable name")
    test.add_argument("--theta0", type=float, default=0.0)
    test.set_defaults(handler=cmd_test)

    mc = sub.add_parser("mc", help="run a Monte Carlo study")
    mc.add_argument("--preset", default=None, help="setting1 .. setting5")
    mc.add_argument("--config", default=None, help="run from a config snapshot")
    mc.add_argument("--n", type=int, default=None, help="sample size per replication")
    mc.add_argument("--N", dest="replications", type=int, default=None, help="replication count")
    mc.add_argument("--seed", type=int, default=None)
    mc.add_argument("--alpha", type=float, default=None)
    mc.add_argument("--grid-size", dest="grid_size", type=int, default=None)
    mc.add_argument("--workers", type=int, default=None)
    mc.add_argument("--bias", choices=("both", "on", "off"), default=None)
    mc.add_argument("--no-bias-correction", action="store_true")
    mc.add_argument("--tuning", choices=("fixed", "bic"), default=None,
                    help="fixed-scale penalty (table replication) or per-replication BIC")
    mc.add_argument("--lambda-scale", dest="lam_scale", type=float, default=None,
                    help="penalty scale c in lam = c * n**0.25 for fixed tuning")
    mc.add_argument("--ci-variance", dest="ci_variance", choices=("full", "active"), default=None)
    mc.add_argument("--out", required=True)
    mc.set_defaults(handler=cmd_mc)

    curve = sub.add_parser("quantile-curve", help="simulate limit-law quantiles")
    curve.add_argument("--grid-max", dest="grid_max", type=float, default=4.0)
    curve.add_argument("--grid-step", dest="grid_step", type=float, default=0.05)
    curve.add_argument("--draws", type=int, default=100_000)
    curve.add_argument("--seed", type=int, default=None)
    curve.add_argument("--alpha", type=float, default=0.05)
    curve.add_argument("--workers", type=int, default=1)
    _add_data_options(curve, required=False)
    _add_fit_options_optional(curve)
    curve.set_defaults(handler=cmd_quantile_curve)

    return parser


def _add_fit_options_optional(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--grid-size", dest="grid_size", type=int, default=100)
    parser.add_argument("--lambda", dest="lam", type=float, default=None)
    parser.add_argument("--no-bias-correction", action="store_true")
    _add_covariance_flags(parser)
    parser.add_argument("--out", required=True)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SingularDesignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RANK
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())

"""Command-line surface: data ingestion, fitting, reproduction runs, curves.

Subcommands::

    pmrisk fit      --csv data.csv --out model.json [--seed N]
    pmrisk simulate (--preset paper | --model F) --estimator sis
                    --alpha 0.05,0.01 --budget 100000 --seed 42 --out report.csv
    pmrisk car      (--preset paper | --model F) --estimator is
                    --alpha 0.05 --budget 100000 --seed 42 --out car.csv
    pmrisk curve    (--preset paper | --model F) --estimator sis
                    --tau-grid 100:700:20 --budget 5000 --seed 42 --out curve.csv

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric/convergence error.
Artifacts embed the seed and the model hash and are written atomically, so a
rerun with the same configuration reproduces them byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from .calibration import (
    ConcentrationSeries,
    compute_log_ratios,
    fit_gh_marginal,
    fit_t_copula,
    split_train_holdout,
)
from .copula import CityPortfolio, CopulaSpec
from .errors import CalibrationError, DataError, DomainError, NumericError, PmriskError
from .presets import portfolio_to_doc, resolve_portfolio
from .risk import build_report, exceedance_curve, solve_car
from .statkit import Rng

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(PmriskError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration for simulate/car/curve runs."""

    mode: str
    preset: str | None
    model_path: str | None
    estimator: str
    alphas: tuple[float, ...]
    budget: int
    seed: int
    tau_grid: tuple[float, ...] | None
    out_path: str

    def __post_init__(self):
        if (self.preset is None) == (self.model_path is None):
            raise UsageError("exactly one of --preset and --model is required")
        if self.mode in ("simulate", "car"):
            if not self.alphas:
                raise UsageError("--alpha list must be nonempty")
            for a in self.alphas:
                if not 0.0 < a < 0.5:
                    raise UsageError(f"alpha {a} outside (0, 0.5)")
        if self.mode == "curve" and not self.tau_grid:
            raise UsageError("curve mode requires --tau-grid")
        if self.budget < 2:
            raise UsageError("--budget must be at least 2")


def ingest_csv(path) -> list[ConcentrationSeries]:
    """Parse the long-format concentration schema ``day,city,pm25``.

    ``pm25`` is a decimal or the literal ``NA``; NA rows become explicit gaps.
    """
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        if [h.strip() for h in header] != ["day", "city", "pm25"]:
            raise DataError(f"{path}:1: expected header 'day,city,pm25'")
        per_city: dict[str, dict[int, float]] = {}
        seen: dict[tuple[str, int], int] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            day_s, city, pm_s = (f.strip() for f in row)
            try:
                day = int(day_s)
            except ValueError:
                raise DataError(f"{path}:{lineno}: day {day_s!r} is not an integer") from None
            if day < 1:
                raise DataError(f"{path}:{lineno}: day must be 1-based, got {day}")
            if not city:
                raise DataError(f"{path}:{lineno}: empty city name")
            key = (city, day)
            if key in seen:
                raise DataError(
                    f"{path}:{lineno}: duplicate entry for {city} day {day}"
                    f" (first at line {seen[key]})"
                )
            seen[key] = lineno
            series = per_city.setdefault(city, {})
            if pm_s == "NA":
                continue  # explicit gap
            try:
                pm = float(pm_s)
            except ValueError:
                raise DataError(f"{path}:{lineno}: pm25 {pm_s!r} is not a number or NA") from None
            if pm <= 0.0:
                raise DataError(f"{path}:{lineno}: nonpositive concentration {pm} for {city}")
            series[day] = pm
    if not per_city:
        raise DataError(f"{path}: no data rows")
    out = []
    for city, obs in per_city.items():
        days = np.array(sorted(obs), dtype=int)
        out.append(
            ConcentrationSeries(city=city, days=days, values=np.array([obs[d] for d in days]))
        )
    return out


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _metadata_lines(config: RunConfig, digest: str) -> list[str]:
    lines = [
        "# pmrisk artifact v1",
        f"# command: {config.mode}",
        f"# estimator: {config.estimator}",
        f"# budget: {config.budget}",
        f"# seed: {config.seed}",
        f"# model_sha256: {digest}",
    ]
    if config.mode in ("simulate", "car"):
        lines.append("# alphas: " + ",".join(repr(float(a)) for a in config.alphas))
    if config.mode == "curve" and config.tau_grid:
        lines.append("# tau_grid: " + ",".join(repr(float(t)) for t in config.tau_grid))
    return lines


def run(config: RunConfig) -> None:
    """Execute a simulate/car/curve configuration and write its artifact."""
    portfolio, digest = resolve_portfolio(config.preset, config.model_path)
    buf = io.StringIO()
    buf.write("\n".join(_metadata_lines(config, digest)) + "\n")
    if config.mode == "simulate":
        report = build_report(
            portfolio, config.alphas, config.estimator, config.budget, config.seed, digest
        )
        for warning in report.warnings:
            print(f"warning: {warning}", file=sys.stderr)
        buf.write("alpha,car,ccar,ccar_ci_pct,vr_factor\n")
        for row in report.rows:
            buf.write(
                f"{row.alpha!r},{row.car!r},{row.ccar!r},"
                f"{row.ccar_ci_pct!r},{row.vr_factor!r}\n"
            )
    elif config.mode == "car":
        buf.write("alpha,car\n")
        for k, alpha in enumerate(sorted(config.alphas, reverse=True)):
            seed_k = Rng(config.seed).split(10 + k).stream
            tau = solve_car(portfolio, alpha, config.estimator, config.budget, seed_k)
            buf.write(f"{alpha!r},{tau!r}\n")
    elif config.mode == "curve":
        points = exceedance_curve(
            portfolio, np.array(config.tau_grid), config.estimator, config.budget, config.seed
        )
        buf.write("tau,ep,ep_halfwidth,hits\n")
        for p in points:
            buf.write(f"{p.tau!r},{p.ep!r},{p.halfwidth95!r},{p.hits}\n")
    else:
        raise UsageError(f"unknown mode {config.mode!r}")
    _atomic_write(config.out_path, buf.getvalue())


def fit(csv_path: str, out_path: str, seed: int, train_fraction: float = 0.9) -> None:
    """Run the calibration pipeline on a CSV and write the fitted model."""
    series = ingest_csv(csv_path)
    panel = compute_log_ratios(series)
    train, holdout = split_train_holdout(panel, train_fraction, Rng(seed))
    d = len(panel.cities)
    fits = []
    for j in range(d):
        samples = train.city_ratios(j)
        fits.append(fit_gh_marginal(samples, rng=Rng(seed).split(100 + j)))
    marginals = [f.params for f in fits]
    if d == 1:
        copula = CopulaSpec(family="t", sigma=np.eye(1), nu=10.0)
        meta_copula = {"note": "single city; dimension-1 identity dependence"}
    else:
        cfit = fit_t_copula(train, marginals)
        copula = cfit.spec
        meta_copula = {
            "loglik_t": cfit.loglik_t,
            "loglik_normal": cfit.loglik_normal,
        }
        if cfit.warning:
            meta_copula["warning"] = cfit.warning
    portfolio = CityPortfolio(
        names=panel.cities,
        weights=np.full(d, 1.0 / d),
        pm0=np.full(d, 100.0),
        scale=np.ones(d),
        marginals=tuple(marginals),
        copula=copula,
    )
    doc = portfolio_to_doc(
        portfolio,
        meta={
            "source_csv": os.path.basename(str(csv_path)),
            "seed": seed,
            "train_rows": train.n_rows,
            "holdout_rows": holdout.n_rows,
            "marginal_logliks": {
                panel.cities[j]: fits[j].loglik for j in range(d)
            },
            "copula": meta_copula,
        },
    )
    _atomic_write(out_path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_alpha_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise UsageError(f"bad --alpha list {text!r}") from None


def _parse_tau_grid(text: str) -> tuple[float, ...]:
    try:
        start_s, stop_s, step_s = text.split(":")
        start, stop, step = float(start_s), float(stop_s), float(step_s)
    except ValueError:
        raise UsageError(f"bad --tau-grid {text!r}; expected start:stop:step") from None
    if step <= 0.0 or stop < start:
        raise UsageError(f"bad --tau-grid {text!r}")
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return tuple(start + k * step for k in range(count))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pmrisk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model from a concentration CSV")
    p_fit.add_argument("--csv", required=True)
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--train-fraction", type=float, default=0.9)

    for name in ("simulate", "car", "curve"):
        p = sub.add_parser(name)
        p.add_argument("--preset", choices=["paper"])
        p.add_argument("--model")
        p.add_argument("--estimator", choices=["naive", "is", "sis"], default="sis")
        p.add_argument("--alpha", default="0.05,0.01,0.005,0.002,0.001")
        p.add_argument("--budget", type=int, default=100_000)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--tau-grid")
        p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "fit":
            if not 0.0 < args.train_fraction < 1.0:
                raise UsageError("--train-fraction must lie in (0, 1)")
            fit(args.csv, args.out, args.seed, args.train_fraction)
        else:
            config = RunConfig(
                mode=args.command,
                preset=args.preset,
                model_path=args.model,
                estimator=args.estimator,
                alphas=_parse_alpha_list(args.alpha),
                budget=args.budget,
                seed=args.seed,
                tau_grid=_parse_tau_grid(args.tau_grid) if args.tau_grid else None,
                out_path=args.out,
            )
            run(config)
        return EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DomainError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, CalibrationError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

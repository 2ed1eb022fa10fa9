"""Batch command-line front end: transform search, model fitting, prediction,
cross-validation comparison, and the simulation study.

Every run writes a ``manifest.txt`` into the output directory echoing the
resolved configuration and seed, so any output can be reproduced.

Exit codes: 0 success, 2 input error, 3 fit failure, 4 optimizer
non-convergence (outputs are still written).
"""
from __future__ import annotations

import csv
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .data import DataError, load_csv
from .evaluation import kfold_cv
from .forest import forest_from_dataset, permutation_importance
from .model_io import ModelFormatError, deserialize_model, serialize_model
from .pipelines import MODEL_NAMES, PipelineConfig, fit_pipeline
from .simulation import CASES, run_all_cases, run_case
from .slm import FitOptions
from .transform import select_transform

EXIT_INPUT_ERROR = 2
EXIT_FIT_ERROR = 3
EXIT_NONCONVERGENCE = 4


def parse_schema(text: str) -> dict:
    """Parse ``easting=x,northing=y,response=z[,categorical=a|b][,ignore=c]``."""
    schema: dict = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise click.UsageError(f"bad schema entry {part!r}; expected role=column")
        role, value = (s.strip() for s in part.split("=", 1))
        if role in ("categorical", "ignore"):
            schema[role] = [v for v in value.split("|") if v]
        else:
            schema[role] = value
    return schema


def read_config(path) -> dict:
    """Simple ``key = value`` config file; '#' starts a comment."""
    config = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.UsageError(f"{path}:{line_no}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        config[key.replace("-", "_")] = value
    return config


def merge_config(ctx: click.Context, config: dict):
    """Config values fill in parameters the command line left at their default."""
    for key, value in config.items():
        if key in ctx.params and ctx.get_parameter_source(key) == click.core.ParameterSource.DEFAULT:
            param = next(p for p in ctx.command.params if p.name == key)
            ctx.params[key] = param.type.convert(value, param, ctx)
    return ctx.params


def write_manifest(out_dir: Path, command: str, params: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"command = {command}"]
    for key in sorted(params):
        if key in ("config",):
            continue
        lines.append(f"{key} = {params[key]}")
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _pipeline_config(seed, trees, mtry, threads, literal_tstat, oob_residuals, select,
                     restarts=3):
    return PipelineConfig(
        seed=seed,
        fit_options=FitOptions(seed=seed, restarts=restarts),
        trees=trees,
        mtry=mtry,
        n_threads=threads,
        select=select,
        literal_tstat=literal_tstat,
        oob_residuals=oob_residuals,
    )


common_options = [
    click.option("--config", type=click.Path(exists=True, dir_okay=False),
                 help="key = value config file; flags override it"),
    click.option("--seed", type=int, default=0, show_default=True),
    click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True,
                 help="output directory"),
    click.option("--threads", type=int, default=1, show_default=True),
]


def add_options(options):
    def wrap(func):
        for option in reversed(options):
            func = option(func)
        return func
    return wrap


@click.group(context_settings={"auto_envvar_prefix": "KRIGEFOREST"})
def cli():
    """Spatial regression vs random forest toolkit."""


@cli.command("transform")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--schema", required=True, help="easting=..,northing=..,response=..[,categorical=a|b]")
@click.option("--zero-threshold", type=float, default=0.02, show_default=True)
@add_options(common_options)
@click.pass_context
def cmd_transform(ctx, input_path, schema, zero_threshold, config, seed, out, threads):
    """Estimate per-covariate Box-Cox transformations and write the audit table."""
    if config:
        merge_config(ctx, read_config(config))
    params = ctx.params
    out_dir = Path(params["out"])
    dataset = load_csv(input_path, parse_schema(params["schema"]))
    rows = []
    for col in dataset.columns:
        if col.is_categorical:
            continue
        spec = select_transform(dataset, col.name, zero_threshold=params["zero_threshold"])
        rows.append([spec.covariate, spec.family, spec.lambda1, spec.lambda2,
                     f"{spec.aic:.6f}", spec.zero_inflated])
    write_manifest(out_dir, "transform", params)
    write_csv(out_dir / "transforms.csv",
              ["covariate", "family", "lambda1", "lambda2", "aic", "zero_inflated"], rows)
    click.echo(f"wrote {out_dir / 'transforms.csv'} ({len(rows)} covariates)")


@cli.command("fit")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--schema", required=True)
@click.option("--model", "model_name", type=click.Choice(["ok", "slm", "slm-tf", "rf", "rfrk"]),
              default="slm", show_default=True)
@click.option("--knots", type=int, default=0, help="reduced-rank knot count (0 = full rank)")
@click.option("--trees", type=int, default=1000, show_default=True)
@click.option("--mtry", type=int, default=0, help="split-candidate count (0 = ceil(p/3))")
@click.option("--max-iter", type=int, default=0, help="optimizer iteration cap (0 = default)")
@click.option("--select/--no-select", default=True, show_default=True,
              help="run two-phase covariate selection for slm-tf")
@click.option("--literal-tstat", is_flag=True, help="prune the largest-|t| covariate first")
@click.option("--oob-residuals", is_flag=True, help="use out-of-bag residuals for RFRK")
@add_options(common_options)
@click.pass_context
def cmd_fit(ctx, input_path, schema, model_name, knots, trees, mtry, max_iter, select,
            literal_tstat, oob_residuals, config, seed, out, threads):
    """Fit a model and write the serialized model plus a diagnostics report."""
    if config:
        merge_config(ctx, read_config(config))
    params = ctx.params
    out_dir = Path(params["out"])
    dataset = load_csv(input_path, parse_schema(params["schema"]))
    cfg = _pipeline_config(params["seed"], params["trees"], params["mtry"] or None,
                           params["threads"], params["literal_tstat"], params["oob_residuals"],
                           params["select"])
    if params["max_iter"]:
        cfg = replace(cfg, fit_options=replace(cfg.fit_options, max_iter=params["max_iter"]))
    if params["knots"]:
        from .covariance import place_knots

        knot_set = place_knots(dataset.coords, params["knots"], seed=params["seed"])
        cfg = replace(cfg, fit_options=replace(cfg.fit_options, knots=knot_set))
    pipeline = fit_pipeline(params["model_name"], dataset, cfg)
    write_manifest(out_dir, "fit", params)
    converged = True
    report = [f"model = {params['model_name']}"]
    if hasattr(pipeline, "model") and hasattr(pipeline, "diagnostics"):
        serialize_model(pipeline.model, out_dir / "model.json")
        diag = pipeline.diagnostics
        if diag is not None:
            converged = diag.converged
            report += [
                f"neg_log_lik = {diag.neg_log_lik}",
                f"aic = {diag.aic}",
                f"effective_range_km = {diag.effective_range}",
                f"nugget_to_sill = {diag.nugget_to_sill}",
                f"converged = {diag.converged}",
            ]
            cov = pipeline.model.cov_params
            report += [f"nugget = {cov.nugget}", f"partial_sill = {cov.partial_sill}",
                       f"range_km = {cov.range}"]
            names = pipeline.model.column_names
            for name, t in zip(names, diag.t_stats):
                report.append(f"t[{name}] = {t}")
    elif params["model_name"] == "rf":
        serialize_model(pipeline.forest, out_dir / "model.json")
        importance = permutation_importance(pipeline.forest, dataset.covariates,
                                            dataset.response, seed=params["seed"])
        order = np.argsort(importance)[::-1]
        write_csv(out_dir / "importance.csv", ["covariate", "importance"],
                  [[dataset.columns[j].name, importance[j]] for j in order])
        report.append(f"trees = {pipeline.forest.B}")
    else:  # rfrk
        serialize_model(pipeline.model, out_dir / "model.json")
        converged = pipeline.model.converged
        cov = pipeline.model.residual_cov
        from .slm import effective_range

        report += [f"nugget = {cov.nugget}", f"partial_sill = {cov.partial_sill}",
                   f"range_km = {cov.range}",
                   f"effective_range_km = {effective_range(cov)}",
                   f"nugget_to_sill = {cov.nugget / cov.sill}",
                   f"converged = {converged}"]
    (out_dir / "diagnostics.txt").write_text("\n".join(report) + "\n")
    click.echo(f"wrote {out_dir / 'model.json'}")
    if not converged:
        click.echo("warning: optimizer did not converge; model carries best-so-far parameters",
                   err=True)
        sys.exit(EXIT_NONCONVERGENCE)


@cli.command("predict")
@click.option("--model-file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--schema", required=True)
@click.option("--truncate", default=None, help="lo,hi response bounds applied to predicted means")
@add_options(common_options)
@click.pass_context
def cmd_predict(ctx, model_file, input_path, schema, truncate, config, seed, out, threads):
    """Predict at new sites from a serialized model; writes predictions.csv."""
    if config:
        merge_config(ctx, read_config(config))
    params = ctx.params
    out_dir = Path(params["out"])
    model = deserialize_model(model_file)
    sites = load_csv(input_path, parse_schema(params["schema"]), require_response=False,
                     allow_duplicates=True, drop_constant=False)
    from .forest import ForestModel, qrf_quantile, rf_predict
    from .rfrk import RFRKModel, rfrk_batch_predict
    from .kriging import batch_predict

    if isinstance(model, ForestModel):
        mean = rf_predict(model, sites.covariates)
        q = qrf_quantile(model, sites.covariates, [0.025, 0.05, 0.95, 0.975])
        var = np.full(len(mean), np.nan)
        lo90, hi90, lo95, hi95 = q[:, 1], q[:, 2], q[:, 0], q[:, 3]
    else:
        if isinstance(model, RFRKModel):
            results = rfrk_batch_predict(model, sites.coords, sites.covariates)
        else:
            results = batch_predict(model, sites)
        mean = np.array([r.mean for r in results])
        var = np.array([r.variance for r in results])
        se = np.sqrt(var)
        lo90, hi90 = mean - 1.645 * se, mean + 1.645 * se
        lo95, hi95 = mean - 1.960 * se, mean + 1.960 * se
    truncated = 0
    if params["truncate"]:
        lo, hi = (float(v) for v in params["truncate"].split(","))
        truncated = int(np.sum((mean < lo) | (mean > hi)))
        mean = np.clip(mean, lo, hi)
    write_manifest(out_dir, "predict", params)
    rows = [[i, mean[i], var[i], lo90[i], hi90[i], lo95[i], hi95[i]] for i in range(len(mean))]
    write_csv(out_dir / "predictions.csv",
              ["row", "mean", "variance", "lower90", "upper90", "lower95", "upper95"], rows)
    click.echo(f"wrote {out_dir / 'predictions.csv'} ({len(rows)} rows, {truncated} truncated)")


@cli.command("cv")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--schema", required=True)
@click.option("--models", default=",".join(MODEL_NAMES), show_default=True)
@click.option("--folds", type=int, default=10, show_default=True)
@click.option("--trees", type=int, default=1000, show_default=True)
@click.option("--mtry", type=int, default=0)
@click.option("--select/--no-select", default=False, show_default=True)
@click.option("--literal-tstat", is_flag=True)
@click.option("--oob-residuals", is_flag=True)
@add_options(common_options)
@click.pass_context
def cmd_cv(ctx, input_path, schema, models, folds, trees, mtry, select, literal_tstat,
           oob_residuals, config, seed, out, threads):
    """k-fold cross-validation comparison; writes cv_metrics.csv and an
    interval-length summary."""
    if config:
        merge_config(ctx, read_config(config))
    params = ctx.params
    out_dir = Path(params["out"])
    dataset = load_csv(input_path, parse_schema(params["schema"]))
    cfg = _pipeline_config(params["seed"], params["trees"], params["mtry"] or None,
                           params["threads"], params["literal_tstat"], params["oob_residuals"],
                           params["select"])
    names = [m.strip() for m in params["models"].split(",") if m.strip()]
    rows, length_rows = [], []
    for name in names:
        report = kfold_cv(dataset, lambda train, name=name: fit_pipeline(name, train, cfg),
                          k=params["folds"], seed=params["seed"], label=name)
        rows.append([name.upper(), report.k_params if report.k_params is not None else "",
                     f"{report.rmspe:.4f}",
                     "" if report.pic90 is None else f"{report.pic90:.4f}",
                     "" if report.pic95 is None else f"{report.pic95:.4f}"])
        q = np.percentile(report.interval_lengths, [0, 25, 50, 75, 100])
        length_rows.append([name.upper()] + [f"{v:.4f}" for v in q])
    write_manifest(out_dir, "cv", params)
    write_csv(out_dir / "cv_metrics.csv", ["Model", "k", "RMSPE", "PIC90", "PIC95"], rows)
    write_csv(out_dir / "interval_lengths.csv",
              ["Model", "min", "q1", "median", "q3", "max"], length_rows)
    click.echo(f"wrote {out_dir / 'cv_metrics.csv'} ({len(rows)} models)")


@cli.command("simulate")
@click.option("--case", "case_id", type=int, default=0, help="case number 1-8 (0 = use --all)")
@click.option("--all", "run_all", is_flag=True, help="run all 8 cases")
@click.option("--fast", is_flag=True, help="CI mode: n_train=200, 10 replicates")
@click.option("--trees", type=int, default=1000, show_default=True)
@add_options(common_options)
@click.pass_context
def cmd_simulate(ctx, case_id, run_all, fast, trees, config, seed, out, threads):
    """Run the 8-case simulation study and write the results table."""
    if config:
        merge_config(ctx, read_config(config))
    params = ctx.params
    out_dir = Path(params["out"])
    if not params["run_all"] and not 1 <= params["case_id"] <= 8:
        raise click.UsageError("pass --all or --case N with N in 1..8")
    kwargs = {"n_train": 200, "replicates": 10} if params["fast"] else {}
    if params["run_all"]:
        results = run_all_cases(seed=params["seed"], trees=params["trees"], fast=params["fast"])
    else:
        case = CASES[params["case_id"] - 1]
        results = [run_case(case, seed=params["seed"], trees=params["trees"], **kwargs)]
    header = ["case", "dominance", "r_squared", "nugget", "partial_sill", "a", "c"]
    for model in ("lm", "slm", "rf", "rfrk"):
        header += [f"rmspe_{model}", f"pic90_{model}"]
    rows = []
    for res in results:
        row = [res.case.id, res.case.dominance, res.case.r_squared_target,
               res.case.nugget, res.case.partial_sill, f"{res.a_mean:.4f}", f"{res.c_mean:.4f}"]
        for model in ("lm", "slm", "rf", "rfrk"):
            row += [f"{res.rmspe[model]:.4f}", f"{res.pic90[model]:.4f}"]
        rows.append(row)
    write_manifest(out_dir, "simulate", params)
    write_csv(out_dir / "simulation.csv", header, rows)
    click.echo(f"wrote {out_dir / 'simulation.csv'} ({len(rows)} cases)")


def main():
    try:
        cli(standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        sys.exit(EXIT_INPUT_ERROR)
    except click.ClickException as exc:
        exc.show()
        sys.exit(EXIT_INPUT_ERROR)
    except click.exceptions.Abort:
        sys.exit(1)
    except (DataError, ModelFormatError, FileNotFoundError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INPUT_ERROR)
    except SystemExit:
        raise
    except Exception as exc:
        click.echo(f"fit error: {exc}", err=True)
        sys.exit(EXIT_FIT_ERROR)


if __name__ == "__main__":
    main()

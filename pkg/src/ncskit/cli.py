"""Command-line interface: run, resume, sweep, compare, test.

Every RunConfig field is exposed as a ``--field-name`` flag; flags override
values from ``--config FILE``.  ``NCSKIT_OUTPUT_DIR`` in the environment
overrides the output directory (and nothing else).  Failures print a JSON
error object to stderr and exit with a stable per-category code.
"""

from __future__ import annotations

from dataclasses import fields
import functools
import json
import os
import sys

import click

from .config import RunConfig, load_config, parse_value
from .errors import EXIT_CODES, NcskitError
from . import runner


def _config_options(fn):
    for f in reversed(fields(RunConfig)):
        flag = "--" + f.name.replace("_", "-")
        fn = click.option(flag, f.name, default=None, metavar="VALUE",
                          help=f"override config field {f.name}")(fn)
    fn = click.option("--config", "config_path", type=click.Path(exists=True),
                      default=None, help="flat key = value config file")(fn)
    return fn


def _build_config(config_path, **overrides) -> RunConfig:
    cfg = load_config(config_path) if config_path else RunConfig()
    provided = {k: parse_value(str(v)) for k, v in overrides.items() if v is not None}
    if provided:
        cfg = cfg.with_overrides(**provided)
    env_out = os.environ.get("NCSKIT_OUTPUT_DIR")
    if env_out:
        cfg = cfg.with_overrides(output_dir=env_out)
    return cfg


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NcskitError as exc:
            click.echo(json.dumps({"error": exc.category, "message": str(exc)}),
                       err=True)
            sys.exit(EXIT_CODES.get(exc.category, 1))
    return wrapper


@click.group()
def main():
    """Surrogate-assisted negatively correlated policy search."""


@main.command(name="run")
@_config_options
@_guarded
def run_cmd(config_path, **overrides):
    """Run one seeded experiment to budget exhaustion."""
    cfg = _build_config(config_path, **overrides)
    result = runner.run(cfg)
    click.echo(json.dumps({k: result.summary[k] for k in
                           ("best_fitness", "test_score", "generations",
                            "true_evaluations", "steps_used", "wall_time_s")},
                          sort_keys=True))


@main.command(name="resume")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@_guarded
def resume_cmd(run_dir):
    """Continue an interrupted run from its checkpoint."""
    cfg = load_config(os.path.join(run_dir, "config.txt"))
    cfg = cfg.with_overrides(output_dir=run_dir)
    result = runner.resume(cfg)
    click.echo(json.dumps({"best_fitness": result.summary["best_fitness"],
                           "test_score": result.summary["test_score"],
                           "generations": result.summary["generations"]},
                          sort_keys=True))


@main.command(name="sweep")
@click.option("--parameter", required=True, help="RunConfig field to vary")
@click.option("--values", required=True, help="JSON list of parameter values")
@click.option("--jobs", default=1, show_default=True, help="concurrent runs")
@_config_options
@_guarded
def sweep_cmd(parameter, values, jobs, config_path, **overrides):
    """Repeat seeded runs per value of one parameter; aggregate test scores."""
    cfg = _build_config(config_path, **overrides)
    try:
        value_list = json.loads(values)
    except json.JSONDecodeError as exc:
        raise click.BadParameter(f"--values must be a JSON list: {exc}") from exc
    results = runner.sweep(cfg, parameter, value_list, n_jobs=jobs)
    for entry in results["values"]:
        click.echo(json.dumps({k: entry[k] for k in
                               ("value", "mean", "median", "min", "max")},
                              sort_keys=True))


@main.command(name="compare")
@click.option("--config-a", "config_a", required=True, type=click.Path(exists=True))
@click.option("--config-b", "config_b", required=True, type=click.Path(exists=True))
@click.option("--target", default=None, type=float,
              help="target fitness; default: median final fitness of config A")
@click.option("--repeats", default=10, show_default=True)
@click.option("--jobs", default=1, show_default=True, help="concurrent runs")
@click.option("--out", default=None, help="output directory override")
@_guarded
def compare_cmd(config_a, config_b, target, repeats, jobs, out):
    """Matched-seed evaluations-to-target comparison of two configurations."""
    cfg_a = load_config(config_a)
    cfg_b = load_config(config_b)
    out = os.environ.get("NCSKIT_OUTPUT_DIR") or out
    if out:
        cfg_a = cfg_a.with_overrides(output_dir=out)
    result = runner.compare(cfg_a, cfg_b, target_score=target, repeats=repeats,
                            n_jobs=jobs)
    click.echo(json.dumps({"target_fitness": result["target_fitness"],
                           "median_ratio": result["median_ratio"],
                           "reached_a": result["reached_a"],
                           "reached_b": result["reached_b"]}, sort_keys=True))


@main.command(name="test")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--episodes", default=30, show_default=True)
@_guarded
def test_cmd(run_dir, episodes):
    """Re-score a run's best policy over fresh test episodes."""
    cfg = load_config(os.path.join(run_dir, "config.txt"))
    result = runner.test_policy(cfg, os.path.join(run_dir, "best_policy.npz"), episodes)
    click.echo(json.dumps({"test_score": result["test_score"],
                           "episodes": result["episodes"]}, sort_keys=True))


if __name__ == "__main__":
    main()

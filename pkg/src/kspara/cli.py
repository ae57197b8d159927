"""``kspara`` command line.

Every subcommand accepts ``--config FILE`` (plain JSON or a previous run
manifest); flags given on the command line override the file.  Parallelism
is capped by the ``KS_PARA_THREADS`` environment variable.
"""

from __future__ import annotations

import sys
from fractions import Fraction

import click

from . import __version__
from .experiments import (
    ACCEPTANCE,
    STUDIES,
    RunConfig,
    run_all,
)
from .io import load_config


class _Number(click.ParamType):
    """Float that also accepts fractions such as ``1/8``."""

    name = "number"

    def convert(self, value, param, ctx):
        if isinstance(value, float):
            return value
        try:
            return float(Fraction(str(value)))
        except (ValueError, ZeroDivisionError):
            self.fail(f"{value!r} is not a number", param, ctx)


NUMBER = _Number()


def _config(config_path, experiment: str, **flags) -> RunConfig:
    base = load_config(config_path) if config_path else {}
    base.pop("experiment", None)
    base.update({k: v for k, v in flags.items() if v is not None and v != ()})
    try:
        return RunConfig.from_dict({**base, "experiment": experiment})
    except (TypeError, ValueError) as e:
        raise click.UsageError(str(e)) from e


def _run(cfg: RunConfig, study: str):
    try:
        res = STUDIES[study](cfg)
    except ValueError as e:
        raise click.ClickException(str(e)) from e
    for f in res.files:
        click.echo(str(f))
    return res


config_opt = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="JSON config or run manifest.")
out_opt = click.option("--out", type=click.Path(file_okay=False), help="Output directory.")
seed_opt = click.option("--seed", type=int)
T_opt = click.option("--T", "T", type=float, help="Final time.")
N_opt = click.option("--N", "N", type=int, help="Frequency cutoff |w|_inf <= N.")
steps_opt = click.option("--steps", type=int, help="Number of time steps.")
eps_opt = click.option("--eps", type=float)
sigma_opt = click.option("--sigma", help="const:c | trig:<c0;a:k1:k2[:cos|sin];...> | sqrt-det:<field file>.")
rho0_opt = click.option("--rho0", help="Initial density: const:c | trig:<spec> | file:<field file>.")
rule_opt = click.option("--rule", type=click.Choice(["left", "trapezoid"]))


@click.group()
@click.version_option(__version__)
def main():
    """Spectral experiments for the renormalized stochastic Keller-Segel equation."""


@main.command()
@config_opt
@N_opt
@T_opt
@steps_opt
@click.option("--delta", type=NUMBER)
@sigma_opt
@rho0_opt
@seed_opt
@eps_opt
@rule_opt
@click.option("--mode", type=click.Choice(["direct", "paracontrolled", "both"]))
@out_opt
def simulate(config_path, delta, **kw):
    """One sample of the regularized solution; snapshots and per-step norms."""
    _run(_config(config_path, "simulate", deltas=(delta,) if delta else None, **kw), "simulate")


@main.command()
@config_opt
@click.option("--delta", "deltas", type=NUMBER, multiple=True, help="Repeat for each dyadic delta.")
@click.option("--N-scale", "N_scale", type=float, help="Use N = N_scale / delta for each delta.")
@N_opt
@T_opt
@steps_opt
@sigma_opt
@rho0_opt
@eps_opt
@rule_opt
@out_opt
def counterterm(config_path, **kw):
    """Growth of the counterterm norm against log(1/delta)."""
    cfg = _config(config_path, "counterterm", **kw)
    res = _run(cfg, "counterterm")
    f = res.results["fit"]
    if f["slope"] is not None:
        click.echo(f"slope={f['slope']:.6g} intercept={f['intercept']:.6g} R2={f['r2']:.6g}")


@main.command()
@config_opt
@N_opt
@click.option("--delta", type=NUMBER)
@T_opt
@steps_opt
@sigma_opt
@rho0_opt
@click.option("--samples", type=int)
@eps_opt
@seed_opt
@rule_opt
@out_opt
def enhance(config_path, delta, **kw):
    """Monte Carlo norms of every enhancement diagram along the time grid."""
    _run(_config(config_path, "enhance", deltas=(delta,) if delta else None, **kw), "enhance")


@main.command("verify-estimates")
@config_opt
@click.option("--lemma", "lemmas", multiple=True, help="Lemma id; repeat. Default: all.")
@click.option("--max-freq", "max_freq", type=int, help="Largest frequency cap; the check also runs at half of it.")
@out_opt
def verify_estimates(config_path, **kw):
    """Ratios lhs/rhs of the harmonic-analysis bounds at two frequency caps."""
    res = _run(_config(config_path, "verify", **kw), "verify")
    for lem, v in res.results["lemmas"].items():
        a, b = v["max_ratio"]
        click.echo(f"{'PASS' if v['passed'] else 'FAIL'} {lem}: {a:.4g} -> {b:.4g} ({v['growth']:+.2%})")
    if not res.results["all_passed"]:
        sys.exit(1)


@main.command()
@config_opt
@click.argument("field", type=click.Path(exists=True, dir_okay=False))
@click.option("--alpha", "alphas", type=float, multiple=True)
@click.option("--p", "p", type=float)
@click.option("--q", "q", type=float)
@out_opt
def besov(config_path, **kw):
    """Besov norms of every slice in a field container."""
    _run(_config(config_path, "besov", **kw), "besov")


@main.command()
@config_opt
@N_opt
@T_opt
@steps_opt
@rho0_opt
@rule_opt
@out_opt
def deterministic(config_path, **kw):
    """Deterministic Keller-Segel path from rho0."""
    _run(_config(config_path, "deterministic", **kw), "deterministic")


@main.command("product-rule")
@config_opt
@N_opt
@click.option("--samples", type=int)
@seed_opt
@out_opt
def product_rule(config_path, **kw):
    """The one-dimensional symmetry identity on random mean-free data."""
    res = _run(_config(config_path, "product-rule", **kw), "product-rule")
    click.echo(f"max relative defect {res.results['max_rel_defect']:.3e}")


@main.command("run-all")
@config_opt
@click.option("--only", "studies", multiple=True,
              help=f"Criterion number (1-{max(ACCEPTANCE)}) or study name; repeat. Default: every criterion.")
@seed_opt
@out_opt
def run_all_cmd(config_path, studies, **kw):
    """Acceptance studies with a PASS/FAIL summary."""
    cfg = _config(config_path, "run-all", **kw)
    keys = list(studies or cfg.studies or [str(c) for c in ACCEPTANCE])
    bundle = run_all(cfg, keys)
    bad = False
    for c, title, status, detail in bundle["summary"]:
        click.echo(f"{status} {c} {title}: {detail}")
        bad |= status in ("FAIL", "ERROR")
    sys.exit(1 if bad else 0)


if __name__ == "__main__":
    main()

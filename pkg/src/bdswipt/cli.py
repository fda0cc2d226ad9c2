"""Command line: ``swipt run`` and ``swipt validate``."""

from __future__ import annotations

import json
from pathlib import Path

import click

from .experiments import SCATTERINGS, SCHEMES, SWEEP_VARS, ExperimentSpec, checks_csv, run_experiment, validate_suite
from .system_model import SystemConfig


def _load_config(path) -> tuple:
    if path is None:
        return SystemConfig(), {}
    data = json.loads(Path(path).read_text())
    extra = data.pop("experiment", {})
    return SystemConfig.from_dict(data), extra


def _parse_sweep(text: str) -> tuple:
    var, sep, vals = text.partition("=")
    if not sep or not vals:
        raise click.BadParameter("expected <var>=<v1,v2,...>")
    if var not in SWEEP_VARS:
        raise click.BadParameter(f"sweep variable must be one of {', '.join(SWEEP_VARS)}")
    try:
        values = [float(v) for v in vals.split(",") if v.strip()]
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from exc
    return var, values


@click.group()
def main() -> None:
    """Cell-free SWIPT experiments with a beyond-diagonal RIS."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON with system parameters; optional \"experiment\" block.")
@click.option("--scheme", type=click.Choice(SCHEMES), default="jap-pa", show_default=True)
@click.option("--scattering", type=click.Choice(SCATTERINGS), default="heu", show_default=True)
@click.option("--arch", default="fc", show_default=True, help="fc, gc:G or diag")
@click.option("--sweep", default=None, help="<var>=<v1,v2,...> with var in M, N, se_min, receivers")
@click.option("--seeds", type=click.IntRange(min=1), default=20, show_default=True, help="seeds 0..n-1")
@click.option("--realizations", type=click.IntRange(min=0), default=0, show_default=True,
              help="Monte Carlo draws per point for the oracle cross-check (0 = off)")
@click.option("--out", type=click.Path(file_okay=False), required=True)
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--timing/--no-timing", default=False, help="fill the wall_ms column")
def run(config_path, scheme, scattering, arch, sweep, seeds, realizations, out, workers, timing) -> None:
    """Solve every (sweep value, seed) point and write results.csv and summary.csv."""
    cfg, extra = _load_config(config_path)
    if sweep is None:
        var, values = "M", [cfg.M]
    else:
        var, values = _parse_sweep(sweep)
    spec = ExperimentSpec(scheme=scheme, scattering=scattering, arch=arch, sweep_var=var, sweep_vals=values,
                          seeds=list(range(seeds)), realizations=realizations, out=out, base=cfg,
                          workers=workers, timing=timing, **extra)
    try:
        spec.validate()
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    res = run_experiment(spec)
    n_ok = sum(r.feasible for r in res.rows)
    click.echo(f"{len(res.rows)} points, {n_ok} feasible -> {res.paths['rows']}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def validate(config_path, seed, out) -> None:
    """Closed forms against sampled values; failures are report rows."""
    cfg = _load_config(config_path)[0] if config_path else None
    checks = validate_suite(cfg, seed=seed)
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    (path / "validation.csv").write_text(checks_csv(checks))
    for c in checks:
        click.echo(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  {c.measured:.3e} (tol {c.tolerance:.1e})")


if __name__ == "__main__":
    main()

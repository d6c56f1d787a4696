"""
Command-line front end of the toolkit.

Every command builds an ExperimentConfig from defaults, an optional TOML file
(--config or DA_CONFIG_FILE) and its own flags, runs one harness driver and
reports the named property checks. Exit status: 0 when every asserted check
passes, 1 when one fails, 2 on a toolkit error.
"""

import asyncio
import logging
from functools import wraps
from pathlib import Path
from typing import List, Sequence

import click
import numpy as np

from .config import DAConfig, load_experiment_config
from .utils.errors import DAError
from .utils.error_models import TsvdFailure
from .utils.field_io import dump_state, export_field_image, load_state, write_csv
from .utils.harness import (
    PropertyCheck,
    all_passed,
    assimilate as run_assimilation,
    build_setup,
    compute_err_metrics,
    drift_checks,
    initial_state,
    run_dt_sweep,
    run_tests_set1,
    run_trend_series,
    singular_value_table,
    write_drift_csv,
    write_err_records,
    write_iteration_log,
    write_set1_tables,
    write_singular_value_table,
    write_trend_series,
)
from .utils.obs_factory import AssimilationWindow, generate_window_data
from .utils.swe_model import FIELDS, StateVector, StencilVariant, integrate
from .utils.tlm_adjoint import dot_product_test, taylor_test

log = logging.getLogger(__name__)

DOT_PRODUCT_TOL = 1e-12
TAYLOR_MIN_ORDER = 1.9
MANIFEST_COLUMNS = ['kind', 'k', 'step', 'time', 'file', 'problem', 'seed']


def _csv_list(cast):
    def parse(ctx, param, value):
        if value is None:
            return None
        try:
            return [cast(item) for item in value.split(',') if item.strip()]
        except ValueError:
            raise click.BadParameter(f"expected a comma-separated list, got {value!r}")
    return parse


def _options(*decorators):
    def apply(f):
        for decorator in reversed(decorators):
            f = decorator(f)
        return f
    return apply


config_option = click.option('--config', 'config_path', type=click.Path(dir_okay=False),
                             default=None, help='TOML experiment file.')

grid_options = _options(
    click.option('--nlon', type=int, help='Longitudes (default 72).'),
    click.option('--nlat', type=int, help='Latitudes (default 36).'),
)

model_options = _options(
    click.option('--dt', type=float, help='Time step in seconds (default 50).'),
    click.option('--alpha', type=float, help='Height-equation factor (default 1/3).'),
    click.option('--p', type=int, help='Zonal stencil width (default 4).'),
    click.option('--q', type=int, help='Meridional stencil width (default 2).'),
    click.option('--variant', type=click.Choice([v.value for v in StencilVariant]),
                 help='Stencil variant.'),
    click.option('--total-steps', type=int,
                 help='Steps from x0 to the last observation (default 30).'),
)

data_options = _options(
    click.option('--problem', type=int, help='Observation protocol 1-4.'),
    click.option('--ntobs', type=int, help='Observations in the window.'),
    click.option('--seed', type=int, help='Seed of the initial state and the noise.'),
)

solver_options = _options(
    click.option('--nsvs', type=int, help='Retained singular values of B.'),
    click.option('--rtol', 'rel_tol', type=float, help='Relative singular value cutoff.'),
    click.option('--lam', type=float, help='Weight of the observation term.'),
    click.option('--gtol', type=float, help='Relative gradient tolerance.'),
    click.option('--maxiter', type=int, help='L-BFGS iteration cap.'),
    click.option('--memory', type=int, help='L-BFGS correction pairs.'),
)

dd_flag_options = _options(
    click.option('--nsub-space', type=int, help='Longitude strips.'),
    click.option('--nsub-time', type=int, help='Time subdomains.'),
    click.option('--halo', type=int, help='Overlap width in cells.'),
    click.option('--mu', type=float, help='Overlap penalty weight.'),
    click.option('--outer-tol', type=float, help='Relative J change ending the outer sweeps.'),
    click.option('--max-sweeps', type=int, help='Outer sweep cap.'),
)

sweep_options = _options(
    click.option('--dt-list', callback=_csv_list(float), help='Comma-separated time steps.'),
    click.option('--ntobs-list', callback=_csv_list(int), help='Comma-separated window lengths.'),
    click.option('--nsvs-list', callback=_csv_list(int), help='Comma-separated nSVs values.'),
    click.option('--problems', callback=_csv_list(int), help='Comma-separated problem ids.'),
)

workers_option = click.option('--workers', type=int, default=None,
                              help='Threads for independent cells (default DA_WORKERS).')


def da_command(f):
    """Report toolkit errors on stderr with exit status 2."""
    @wraps(f)
    def decorated_function(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except DAError as e:
            log.error(f"{f.__name__}: {type(e).__name__}: {e}")
            click.echo(f"error: {type(e).__name__}: {e}", err=True)
            raise SystemExit(2)
    return decorated_function


def _out(path) -> Path:
    return DAConfig.output_path(path)


def _report(checks: Sequence[PropertyCheck]):
    for c in checks:
        label = ('PASS' if c.passed else 'FAIL') if c.asserted else 'INFO'
        click.echo(f"{label} {c.name}: {c.detail}")
    if not all_passed(checks):
        raise SystemExit(1)


@click.group()
def cli():
    """Shallow-water 4D-Var toolkit."""
    logging.basicConfig(
        level=DAConfig.LOG_LEVEL,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )


@cli.command('run-model')
@config_option
@grid_options
@model_options
@click.option('--seed', type=int)
@click.option('--steps', type=int, help='Time steps to integrate (default 30).')
@click.option('--out', default='state.swe1', show_default=True)
@da_command
def run_model(config_path, out, **overrides):
    """Integrate the synthetic initial state and dump the final state."""
    config = load_experiment_config(config_path, overrides)
    x0 = initial_state(config)
    xn = integrate(x0, config.grid(), config.model_params(msteps=config.steps))
    path = dump_state(xn, _out(out))
    drift = float(np.linalg.norm(xn.data - x0.data) / x0.norm())
    click.echo(f"steps={config.steps} dt={config.dt:g} rel_drift={drift!r}")
    click.echo(f"wrote {path}")


@cli.command('gen-obs')
@config_option
@grid_options
@model_options
@data_options
@click.option('--out-dir', default='obs', show_default=True)
@da_command
def gen_obs(config_path, out_dir, **overrides):
    """Write x0, the background and the window observations as SWE1 files."""
    config = load_experiment_config(config_path, overrides)
    grid = config.grid()
    x0 = initial_state(config)
    x_b, obs = generate_window_data(x0, grid, config.model_params(), config.ntobs,
                                    config.problem, config.seed, config.total_steps)
    window = AssimilationWindow(config.ntobs, config.dt, config.total_steps)
    out_dir = _out(out_dir)

    rows: List[List[str]] = []
    dump_state(x0, out_dir / 'x0.swe1')
    rows.append(['x0', '', '0', repr(0.0), 'x0.swe1'])
    dump_state(x_b, out_dir / 'x_b.swe1')
    rows.append(['background', '', str(window.base_step), repr(window.interval[0]), 'x_b.swe1'])
    for k, (step, y) in enumerate(zip(window.obs_steps, obs.obs)):
        name = f"obs_{k:02d}.swe1"
        dump_state(StateVector(y, grid.nlon, grid.nlat), out_dir / name)
        rows.append(['observation', str(k), str(step), repr(step * config.dt), name])
    run_id = [str(config.problem), str(config.seed)]
    manifest = write_csv(out_dir / 'manifest.csv', MANIFEST_COLUMNS, [row + run_id for row in rows])
    click.echo(f"problem={config.problem} ntobs={config.ntobs} seed={config.seed}")
    click.echo(f"wrote {manifest}")


@cli.command('assimilate')
@config_option
@grid_options
@model_options
@data_options
@solver_options
@dd_flag_options
@workers_option
@click.option('--out', default='x_da.swe1', show_default=True)
@click.option('--log', 'log_path', default='iterations.jsonl', show_default=True,
              help='JSON-lines iteration log.')
@da_command
def assimilate_cmd(config_path, workers, out, log_path, **overrides):
    """One 4D-Var solve; writes x_DA and the iteration log."""
    config = load_experiment_config(config_path, overrides)
    workers = workers or DAConfig.WORKERS
    x0 = initial_state(config)
    setup, _, _ = build_setup(config, x0, config.dt, config.ntobs, config.problem, config.nsvs)
    if isinstance(setup, TsvdFailure):
        values = ', '.join(repr(float(s)) for s in setup.singular_values)
        _report([PropertyCheck('TSVD preconditioner usable', False,
                               f"{setup.reason}: nsvs={setup.nsvs} S=[{values}]")])
        return

    result = run_assimilation(config, setup, workers)
    dump_state(result.x_da, _out(out))
    write_iteration_log(result, _out(log_path))
    err_b, err_da = compute_err_metrics(result.x_da, setup)
    click.echo(f"status={result.status.value} iterations={result.iterations} "
               f"J0={result.j_initial!r} J={result.j_final!r} grad_norm={result.grad_norm_final!r}")
    click.echo(f"err_b={err_b!r} err_da={err_da!r}")
    _report([PropertyCheck('descent', result.j_final <= result.j_initial,
                           f"J {result.j_initial!r} -> {result.j_final!r}")])


@cli.command('verify-adjoint')
@config_option
@grid_options
@model_options
@click.option('--seed', type=int)
@click.option('--steps', type=int, help='Window length of the dot-product test.')
@click.option('--pairs', type=int, default=20, show_default=True)
@da_command
def verify_adjoint(config_path, pairs, **overrides):
    """Dot-product test of the window adjoint and Taylor test of the TLM."""
    config = load_experiment_config(config_path, overrides)
    grid = config.grid()
    params = config.model_params(msteps=config.steps)
    dot = dot_product_test(grid, params, config.steps, config.seed, pairs)
    taylor = taylor_test(grid, params, config.seed)
    click.echo(f"dot_product_residual={dot!r}")
    for eps, res in zip(taylor.epsilons, taylor.residuals):
        click.echo(f"taylor eps={eps:g} residual={res!r}")
    _report([
        PropertyCheck('dot-product identity', dot <= DOT_PRODUCT_TOL, f"{dot:.3e}"),
        PropertyCheck('taylor order >= 1.9', taylor.min_order >= TAYLOR_MIN_ORDER,
                      ', '.join(f"{o:.3f}" for o in taylor.orders)),
    ])


@cli.command('sweep-dt')
@config_option
@grid_options
@model_options
@click.option('--seed', type=int)
@click.option('--dt-list', callback=_csv_list(float), help='Comma-separated time steps.')
@click.option('--out', default='drift.csv', show_default=True)
@da_command
def sweep_dt(config_path, out, **overrides):
    """Relative drift of 30 model steps for each time step."""
    config = load_experiment_config(config_path, overrides)
    rows = run_dt_sweep(config)
    path = write_drift_csv(rows, _out(out))
    click.echo(f"wrote {path}")
    _report(drift_checks(rows))


@cli.command('tests-set1')
@config_option
@grid_options
@model_options
@data_options
@solver_options
@dd_flag_options
@sweep_options
@workers_option
@click.option('--out-dir', default='set1', show_default=True)
@da_command
def tests_set1(config_path, workers, out_dir, **overrides):
    """The (problem, dt, nSVs, nt_obs) sweep with its tables."""
    config = load_experiment_config(config_path, overrides)
    workers = workers or DAConfig.WORKERS
    out_dir = _out(out_dir)
    x0 = initial_state(config)
    report = run_tests_set1(config, workers, x0)
    write_err_records(report.records, out_dir / 'err_records.csv')
    tables = write_set1_tables(report.records, out_dir)
    write_singular_value_table(singular_value_table(config, x0=x0), out_dir / 'sv_table.csv')
    failed = sum(r.failed for r in report.records)
    click.echo(f"cells={len(report.records)} tsvd_failures={failed} tables={len(tables)}")
    click.echo(f"wrote {out_dir}")
    _report(report.checks)


@cli.command('trends')
@config_option
@grid_options
@model_options
@data_options
@solver_options
@dd_flag_options
@sweep_options
@click.option('--mode', type=click.Choice(['set2', 'set3']), default='set2', show_default=True)
@click.option('--images/--no-images', default=False, help='Also write PGM field images.')
@click.option('--out-dir', default='trends', show_default=True)
@da_command
def trends(config_path, mode, images, out_dir, **overrides):
    """Misfit against each observation time, for x_DA and x_b."""
    config = load_experiment_config(config_path, overrides)
    out_dir = _out(out_dir)
    series, checks = run_trend_series(config, mode, out_dir / 'images' if images else None)
    paths = write_trend_series(series, out_dir)
    click.echo(f"series={len(paths)}")
    click.echo(f"wrote {out_dir}")
    _report(checks)


@cli.command('export-image')
@click.argument('state_path', type=click.Path(exists=True, dir_okay=False))
@click.option('--field', 'field_name', type=click.Choice(list(FIELDS)), default='h',
              show_default=True)
@click.option('--out', default=None, help='Image path (default <state>_<field>.pgm).')
@da_command
def export_image(state_path, field_name, out):
    """Write one field of a SWE1 dump as a PGM image."""
    state = load_state(state_path)
    out = out or f"{Path(state_path).stem}_{field_name}.pgm"
    path = export_field_image(state, field_name, _out(out))
    click.echo(f"wrote {path}")


@cli.command('serve')
@click.option('--host', default='127.0.0.1', show_default=True)
@click.option('--port', type=int, default=8000, show_default=True)
def serve(host, port):
    """Serve the HTTP API with hypercorn."""
    from hypercorn.asyncio import serve as hypercorn_serve
    from hypercorn.config import Config
    from . import App

    config = Config()
    config.bind = [f"{host}:{port}"]
    asyncio.run(hypercorn_serve(App(__name__), config))

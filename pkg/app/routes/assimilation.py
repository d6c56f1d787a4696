from quart import Blueprint, request, jsonify, current_app
from ..middleware import json_errors
from ..config import load_experiment_config
from ..utils.error_models import TsvdFailure
from ..utils.harness import assimilate, build_setup, compute_err_metrics, initial_state
import asyncio

assimilation_bp = Blueprint('assimilation', __name__)


def _run_assimilation(config):
    x0 = initial_state(config)
    setup, _, _ = build_setup(config, x0, config.dt, config.ntobs, config.problem, config.nsvs)
    if isinstance(setup, TsvdFailure):
        return setup, None, None
    result = assimilate(config, setup)
    return setup, result, compute_err_metrics(result.x_da, setup)


@assimilation_bp.route('/assimilate', methods=['POST'])
@json_errors
async def run_assimilation():
    """One 4D-Var solve for the posted configuration"""
    data = await request.get_json(silent=True) or {}
    config = load_experiment_config(overrides=data)

    setup, result, errs = await asyncio.to_thread(_run_assimilation, config)
    if result is None:
        current_app.logger.warning(f"assimilate: TSVD failed ({setup.reason}) nsvs={setup.nsvs}")
        return jsonify({
            'status': 'tsvd-failure',
            'reason': setup.reason,
            'nsvs': setup.nsvs,
            'singular_values': [float(s) for s in setup.singular_values],
        }), 422

    current_app.logger.info(
        f"assimilate: problem={config.problem} dt={config.dt} ntobs={config.ntobs} "
        f"J {result.j_initial:.6e} -> {result.j_final:.6e} ({result.status.value})"
    )
    return jsonify({
        'status': result.status.value,
        'iterations': result.iterations,
        'j_initial': result.j_initial,
        'j_final': result.j_final,
        'grad_norm_final': result.grad_norm_final,
        'err_b': errs[0],
        'err_da': errs[1],
        'history': [rec.as_dict() for rec in result.history],
    })

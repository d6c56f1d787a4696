from quart import Blueprint, request, jsonify, current_app
from ..middleware import json_errors
from ..config import ExperimentConfig, load_experiment_config
from ..utils.harness import DriftRow, drift_checks, initial_state, run_dt_sweep
from ..utils.swe_model import FIELDS, integrate
from ..utils.tlm_adjoint import dot_product_test, taylor_test
import asyncio
import json
import numpy as np
from typing import Dict, List

model_bp = Blueprint('model', __name__)

# Drift tables are deterministic per configuration, so they are computed once
# and kept in memory. Concurrent requests for the same configuration wait on a
# single computation instead of starting their own.
_drift_cache: Dict[str, List[dict]] = {}
_drift_lock = asyncio.Lock()


async def _request_config() -> ExperimentConfig:
    data = await request.get_json(silent=True) or {}
    return load_experiment_config(overrides=data)


def _field_stats(state) -> dict:
    return {
        name: {
            'min': float(state.field(name).min()),
            'max': float(state.field(name).max()),
            'mean': float(state.field(name).mean()),
        }
        for name in FIELDS
    }


@model_bp.route('/health', methods=['GET'])
async def health():
    return jsonify({'status': 'ok', 'defaults': ExperimentConfig().model_dump(mode='json')})


@model_bp.route('/model/run', methods=['POST'])
@json_errors
async def run_model():
    """Integrate the synthetic initial state and report drift and field ranges"""
    config = await _request_config()

    def _run():
        x0 = initial_state(config)
        xn = integrate(x0, config.grid(), config.model_params(msteps=config.steps))
        drift = float(np.linalg.norm(xn.data - x0.data) / x0.norm())
        return drift, _field_stats(xn)

    drift, stats = await asyncio.to_thread(_run)
    current_app.logger.info(f"model run: dt={config.dt} steps={config.steps} drift={drift:.6e}")
    return jsonify({'dt': config.dt, 'steps': config.steps, 'rel_drift': drift, 'fields': stats})


@model_bp.route('/model/drift', methods=['GET'])
@json_errors
async def drift_table():
    """Drift against dt for the configuration given in the query string"""
    overrides = {k: v for k, v in request.args.items() if k != 'dt_list'}
    if 'dt_list' in request.args:
        overrides['dt_list'] = [float(x) for x in request.args['dt_list'].split(',') if x]
    config = load_experiment_config(overrides=overrides)
    key = json.dumps(config.model_dump(mode='json'), sort_keys=True)

    if key not in _drift_cache:
        async with _drift_lock:
            if key not in _drift_cache:
                rows = await asyncio.to_thread(run_dt_sweep, config)
                _drift_cache[key] = [{'dt': r.dt, 'rel_diff': r.rel_diff} for r in rows]

    rows = _drift_cache[key]
    checks = drift_checks([DriftRow(r['dt'], r['rel_diff']) for r in rows])
    return jsonify({
        'rows': rows,
        'checks': [{'name': c.name, 'passed': c.passed, 'detail': c.detail} for c in checks],
    })


@model_bp.route('/verify-adjoint', methods=['POST'])
@json_errors
async def verify_adjoint():
    """Dot-product and Taylor tests on the configured grid"""
    config = await _request_config()
    grid = config.grid()
    params = config.model_params(msteps=config.steps)

    dot = await asyncio.to_thread(dot_product_test, grid, params, config.steps, config.seed)
    taylor = await asyncio.to_thread(taylor_test, grid, params, config.seed)
    return jsonify({
        'steps': config.steps,
        'dot_product_residual': dot,
        'taylor': {'epsilons': taylor.epsilons, 'residuals': taylor.residuals,
                   'orders': taylor.orders},
        'passed': dot <= 1e-12 and taylor.min_order >= 1.9,
    })

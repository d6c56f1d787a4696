import numpy as np
import pytest

from app.utils.cost_grad import AssimilationSetup
from app.utils.error_models import build_background_cov, build_obs_operator, build_obs_weights, tsvd
from app.utils.obs_factory import generate_window_data
from app.utils.sphere_grid import build_grid
from app.utils.swe_model import ModelParams, StencilVariant, synth_initial


def make_setup(grid, params, problem=1, ntobs=3, seed=0, total_steps=6, lam=1.0,
               steps_per_obs=1, nsvs=1):
    x0 = synth_initial(seed, grid)
    x_b, obs = generate_window_data(x0, grid, params, ntobs, problem, seed, total_steps)
    precon = tsvd(build_background_cov(x_b), nsvs)
    return AssimilationSetup(
        x_b=x_b,
        obs=obs,
        H=build_obs_operator(problem, grid),
        rinv=build_obs_weights(grid),
        precon=precon,
        grid=grid,
        params=params,
        lam=lam,
        steps_per_obs=steps_per_obs,
    )


@pytest.fixture
def setup_factory():
    return make_setup


@pytest.fixture
def grid_4x3():
    return build_grid(4, 3)


@pytest.fixture
def params_4x3():
    return ModelParams(dt=50.0, p=1, q=1, msteps=3)


@pytest.fixture
def grid_8x6():
    return build_grid(8, 6)


@pytest.fixture
def params_8x6():
    return ModelParams(dt=50.0, p=3, q=2, msteps=5)


@pytest.fixture
def grid_12x6():
    return build_grid(12, 6)


@pytest.fixture
def params_12x6():
    return ModelParams(dt=50.0, p=2, q=2, msteps=6)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


@pytest.fixture(params=list(StencilVariant), ids=lambda v: v.value)
def variant(request):
    return request.param

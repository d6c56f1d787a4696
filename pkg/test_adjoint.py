import numpy as np
import pytest

from app.utils.errors import StateError
from app.utils.swe_model import StateVector, stencil_for, step, step_array
from app.utils.tlm_adjoint import (
    adjoint_step,
    adjoint_window,
    dot_product_test,
    linearize,
    random_state,
    taylor_test,
    tlm_step,
    tlm_window,
)


def dense(op, n):
    cols = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        cols.append(op(e))
    return np.column_stack(cols)


def test_step_dot_product(grid_8x6, params_8x6, rng, variant):
    base = random_state(rng, grid_8x6)
    for _ in range(5):
        d = rng.standard_normal(grid_8x6.state_size)
        y = rng.standard_normal(grid_8x6.state_size)
        md = tlm_step(base, d, grid_8x6, params_8x6, variant).data
        mty = adjoint_step(base, y, grid_8x6, params_8x6, variant).data
        assert abs(md @ y - d @ mty) <= 1e-12 * np.linalg.norm(md) * np.linalg.norm(y)


def test_dense_adjoint_is_transpose(grid_4x3, params_4x3, rng, variant):
    base = random_state(rng, grid_4x3)
    n = grid_4x3.state_size
    tlm = dense(lambda e: tlm_step(base, e, grid_4x3, params_4x3, variant).data, n)
    adj = dense(lambda e: adjoint_step(base, e, grid_4x3, params_4x3, variant).data, n)
    np.testing.assert_allclose(adj, tlm.T, rtol=0, atol=1e-14 * np.abs(tlm).max())


def test_tlm_matches_complex_step(grid_4x3, params_4x3, rng, variant):
    # the step is a quadratic polynomial, so the complex-step derivative is exact
    base = random_state(rng, grid_4x3)
    st = stencil_for(grid_4x3, params_4x3.p, params_4x3.q, params_4x3.alpha)
    h = 1e-20
    n = grid_4x3.state_size
    tlm = dense(lambda e: tlm_step(base, e, grid_4x3, params_4x3, variant).data, n)
    oracle = dense(lambda e: step_array(base + 1j * h * e, st, params_4x3.dt, variant).imag / h, n)
    np.testing.assert_allclose(tlm, oracle, rtol=0, atol=1e-14 * np.abs(oracle).max())


def test_tlm_matches_central_difference(grid_8x6, params_8x6, rng, variant):
    base = random_state(rng, grid_8x6)
    d = rng.standard_normal(grid_8x6.state_size)
    eps = 1e-6 * np.linalg.norm(base) / np.linalg.norm(d)
    fd = (step(base + eps * d, grid_8x6, params_8x6, variant).data
          - step(base - eps * d, grid_8x6, params_8x6, variant).data) / (2 * eps)
    jd = tlm_step(base, d, grid_8x6, params_8x6, variant).data
    assert np.linalg.norm(fd - jd) <= 1e-6 * np.linalg.norm(jd)


def test_taylor_order(grid_8x6, params_8x6, variant):
    report = taylor_test(grid_8x6, params_8x6, seed=3, variant=variant)
    assert len(report.orders) == 3
    assert report.min_order >= 1.9
    assert all(r1 < r0 for r0, r1 in zip(report.residuals, report.residuals[1:]))


@pytest.mark.parametrize('nsteps', [1, 10, 30])
def test_window_dot_product(grid_8x6, params_8x6, variant, nsteps):
    assert dot_product_test(grid_8x6, params_8x6, nsteps=nsteps, seed=11, pairs=20,
                            variant=variant) <= 1e-12


def test_window_splits_compose(grid_8x6, params_8x6, rng):
    lin = linearize(random_state(rng, grid_8x6), grid_8x6, params_8x6, 5)
    assert len(lin) == 5
    y = rng.standard_normal(grid_8x6.state_size)
    whole = adjoint_window(lin, y).data
    for k in range(6):
        split = adjoint_window(lin.window(0, k), adjoint_window(lin.window(k, 5), y)).data
        np.testing.assert_allclose(split, whole, rtol=1e-14, atol=0)

    d = rng.standard_normal(grid_8x6.state_size)
    np.testing.assert_allclose(
        tlm_window(lin.window(2, 5), tlm_window(lin.window(0, 2), d)).data,
        tlm_window(lin, d).data, rtol=1e-14, atol=0,
    )


def test_empty_window_is_identity(grid_8x6, params_8x6, rng):
    lin = linearize(random_state(rng, grid_8x6), grid_8x6, params_8x6, 0)
    y = rng.standard_normal(grid_8x6.state_size)
    np.testing.assert_array_equal(adjoint_window(lin, y).data, y)
    np.testing.assert_array_equal(tlm_window(lin, y).data, y)


def test_tlm_is_linear(grid_8x6, params_8x6, rng):
    base = random_state(rng, grid_8x6)
    assert not np.any(tlm_step(base, np.zeros(grid_8x6.state_size), grid_8x6, params_8x6).data)


def test_rejects_bad_inputs(grid_8x6, params_8x6, rng):
    base = random_state(rng, grid_8x6)
    with pytest.raises(StateError):
        tlm_step(base, np.zeros(10), grid_8x6, params_8x6)
    bad = base.copy()
    bad[0] = np.inf
    with pytest.raises(StateError):
        adjoint_step(bad, np.zeros(grid_8x6.state_size), grid_8x6, params_8x6)
    with pytest.raises(StateError):
        tlm_window(linearize(base, grid_8x6, params_8x6, 2), StateVector(np.zeros(36), 4, 3))

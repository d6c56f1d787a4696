import math

import numpy as np
import pytest

from app.utils.errors import GridError, ParameterError, StateError
from app.utils.sphere_grid import build_grid, clamp_lat, wrap_lon
from app.utils.swe_model import (
    FIELDS,
    FieldParams,
    ModelParams,
    StateVector,
    StencilVariant,
    TurkelZwasStencil,
    integrate,
    relative_drift,
    rhs,
    step,
    synth_initial,
    trajectory,
)
from app.utils.tlm_adjoint import random_state


def loop_rhs(x, grid, p, q, alpha, variant):
    """Cell-by-cell tendencies written straight from the stencil formulas."""
    nlon, nlat, n = grid.nlon, grid.nlat, grid.size
    u = x[:n].reshape(nlat, nlon)
    v = x[n:2 * n].reshape(nlat, nlon)
    h = x[2 * n:].reshape(nlat, nlon)
    a, g, om = grid.a, grid.g, grid.omega
    sl = 1.0 / (2.0 * a * grid.dlambda)
    sa = 1.0 / (2.0 * a * grid.dtheta)
    w = v if variant is StencilVariant.CORRECTED else u

    def at(f, i, j):
        return f[clamp_lat(j, nlat), wrap_lon(i, nlon)]

    def theta(j):
        return grid.theta[clamp_lat(j, nlat)]

    def cor(i, j):
        return 2.0 * om * math.sin(theta(j)) + math.tan(theta(j)) / a * at(u, i, j)

    def pv(i, j):
        return cor(i, j) * at(v, i, j)

    def qu(i, j):
        return cor(i, j) * at(u, i, j)

    def du_p(i, j):
        return at(u, i + p, j) - at(u, i - p, j)

    def dcv_q(i, j):
        return (math.cos(theta(j + q)) * at(v, i, j + q)
                - math.cos(theta(j - q)) * at(v, i, j - q))

    U = np.zeros((nlat, nlon))
    V = np.zeros((nlat, nlon))
    H = np.zeros((nlat, nlon))
    for j in range(nlat):
        c = math.cos(grid.theta[j])
        for i in range(nlon):
            uu, vv, hh = u[j, i], v[j, i], h[j, i]
            U[j, i] = (-sl / c * uu * (at(u, i + 1, j) - at(u, i - 1, j))
                       - sa * vv * (at(u, i, j + 1) - at(u, i, j - 1))
                       - sl * g / p / c * (at(h, i + p, j) - at(h, i - p, j))
                       + 2.0 * ((1 - alpha) * pv(i, j)
                                + 0.5 * alpha * (pv(i + p, j) + pv(i - p, j))))
            V[j, i] = (-sl / c * uu * (at(v, i + 1, j) - at(v, i - 1, j))
                       - sa * vv * (at(w, i, j + 1) - at(w, i, j - 1))
                       - sa * g / q * (at(h, i, j + q) - at(h, i, j - q))
                       - 2.0 * ((1 - alpha) * qu(i, j)
                                + 0.5 * alpha * (qu(i, j + q) + qu(i, j - q))))
            avg_du = (1 - alpha) * du_p(i, j) + 0.5 * alpha * (du_p(i, j + q) + du_p(i, j - q))
            avg_dcv = ((1 - alpha) * dcv_q(i, j)
                       + 0.5 * alpha * (dcv_q(i + p, j) + dcv_q(i - p, j)))
            H[j, i] = -alpha * (sl / c * uu * (at(h, i + 1, j) - at(h, i - 1, j))
                                + sa * vv * (at(h, i, j + 1) - at(h, i, j - 1))
                                + sl / p / c * hh * avg_du
                                + sa / q * avg_dcv)
    return np.concatenate([U.ravel(), V.ravel(), H.ravel()])


class TestSphereGrid:

    def test_rejects_too_small(self):
        with pytest.raises(GridError):
            build_grid(2, 5)
        with pytest.raises(GridError):
            build_grid(5, 1)

    def test_sizes(self):
        grid = build_grid(4, 2)
        assert grid.size == 8
        assert grid.state_size == 24
        assert grid.dlambda == pytest.approx(math.pi / 2)

    def test_latitudes_are_cell_centred(self):
        grid = build_grid(72, 36)
        assert np.all(np.cos(grid.theta) > 0)
        assert grid.theta[0] == pytest.approx(-grid.theta[-1])
        assert grid.theta[0] == pytest.approx(-math.pi / 2 + math.pi / 72)

    def test_wrap_and_clamp(self):
        assert wrap_lon(-1, 8) == 7
        assert wrap_lon(8, 8) == 0
        np.testing.assert_array_equal(wrap_lon(np.array([-2, 3, 9]), 8), [6, 3, 1])
        assert clamp_lat(-2, 6) == 0
        assert clamp_lat(9, 6) == 5
        np.testing.assert_array_equal(clamp_lat(np.array([-1, 2, 6]), 6), [0, 2, 5])


class TestStateVector:

    def test_layout(self):
        sv = StateVector(np.arange(24.0), 4, 2)
        assert sv.u[1, 2] == 6.0
        assert sv.v[0, 0] == 8.0
        assert sv.h[0, 0] == 16.0
        assert sv.block_size == 8

    def test_fields_are_views(self):
        sv = StateVector(np.zeros(24), 4, 2)
        sv.h[1, 3] = 5.0
        assert sv.data[23] == 5.0

    def test_wrong_length(self):
        with pytest.raises(StateError):
            StateVector(np.zeros(23), 4, 2)

    def test_unknown_field(self):
        with pytest.raises(StateError):
            StateVector(np.zeros(24), 4, 2).field('w')


class TestModelParams:

    @pytest.mark.parametrize('kwargs', [
        {'dt': -1.0},
        {'dt': math.inf},
        {'alpha': 1.0},
        {'alpha': 0.0},
        {'p': 0},
        {'msteps': -1},
    ])
    def test_rejects(self, kwargs):
        with pytest.raises(ParameterError):
            ModelParams(**kwargs)

    def test_zero_dt_is_allowed(self):
        assert ModelParams(dt=0.0).dt == 0.0

    def test_stencil_must_fit(self, grid_8x6):
        with pytest.raises(GridError):
            TurkelZwasStencil(grid_8x6, 4, 2, 1 / 3)
        with pytest.raises(GridError):
            step(np.full(grid_8x6.state_size, 1.0), grid_8x6, ModelParams())


def assert_tendencies_close(got, expected):
    """1e-14 relative to the largest tendency.

    A tendency is a sum of terms much larger than itself where it crosses zero,
    so a purely elementwise relative bound is not meaningful there.
    """
    scale = np.abs(expected).max()
    np.testing.assert_allclose(got, expected, rtol=1e-14, atol=1e-14 * scale)


class TestStencil:

    def test_matches_loop_oracle(self, grid_8x6, params_8x6, rng, variant):
        x = random_state(rng, grid_8x6)
        expected = loop_rhs(x, grid_8x6, params_8x6.p, params_8x6.q, params_8x6.alpha, variant)
        assert_tendencies_close(rhs(x, grid_8x6, params_8x6, variant).data, expected)

    def test_matches_loop_oracle_on_smallest_grid(self, grid_4x3, params_4x3, rng, variant):
        x = random_state(rng, grid_4x3)
        expected = loop_rhs(x, grid_4x3, 1, 1, params_4x3.alpha, variant)
        assert_tendencies_close(rhs(x, grid_4x3, params_4x3, variant).data, expected)

    def test_longitude_roll_commutes(self, grid_8x6, params_8x6, rng, variant):
        x = StateVector(random_state(rng, grid_8x6), 8, 6)
        rolled = StateVector.from_fields(*(np.roll(x.field(f), 1, axis=1) for f in FIELDS))
        a = rhs(x, grid_8x6, params_8x6, variant)
        b = rhs(rolled, grid_8x6, params_8x6, variant)
        for f in FIELDS:
            np.testing.assert_array_equal(b.field(f), np.roll(a.field(f), 1, axis=1))

    def test_single_height_footprint(self, grid_8x6, params_8x6, variant):
        # p=3, q=2: a bump at row 2, column 4 reaches columns 4-3 and 4+3 (wrapped to 7)
        # in U and rows 0 and 4 in V
        h = np.zeros((6, 8))
        h[2, 4] = 1.0
        zeros = np.zeros((6, 8))
        out = rhs(StateVector.from_fields(zeros, zeros, h), grid_8x6, params_8x6, variant)
        assert set(zip(*np.nonzero(out.u))) == {(2, 1), (2, 7)}
        assert set(zip(*np.nonzero(out.v))) == {(0, 4), (4, 4)}
        assert not np.any(out.h)

    def test_uniform_meridional_wind(self, grid_8x6, params_8x6, variant):
        v0 = 3.0
        zeros = np.zeros((6, 8))
        x = StateVector.from_fields(zeros, np.full((6, 8), v0), np.full((6, 8), 5000.0))
        out = rhs(x, grid_8x6, params_8x6, variant)
        f = 2.0 * grid_8x6.omega * np.sin(grid_8x6.theta)
        np.testing.assert_allclose(out.u, np.repeat((2.0 * f * v0)[:, None], 8, axis=1),
                                   rtol=1e-14, atol=1e-20)
        assert not np.any(out.v)

    def test_variants_share_coriolis_terms(self, grid_8x6, params_8x6, rng):
        # with v = 0 only the Coriolis bracket and pressure terms act on V
        u = rng.standard_normal((6, 8))
        h = 5000.0 + rng.standard_normal((6, 8))
        x = StateVector.from_fields(u, np.zeros((6, 8)), h)
        a = rhs(x, grid_8x6, params_8x6, StencilVariant.AS_PRINTED)
        b = rhs(x, grid_8x6, params_8x6, StencilVariant.CORRECTED)
        np.testing.assert_array_equal(a.data, b.data)
        assert np.any(a.v)

    def test_variants_differ_only_in_v(self, grid_8x6, params_8x6, rng):
        x = random_state(rng, grid_8x6)
        a = rhs(x, grid_8x6, params_8x6, StencilVariant.AS_PRINTED)
        b = rhs(x, grid_8x6, params_8x6, StencilVariant.CORRECTED)
        np.testing.assert_array_equal(a.u, b.u)
        np.testing.assert_array_equal(a.h, b.h)
        assert not np.array_equal(a.v, b.v)

    def test_resting_fluid_is_steady(self, grid_8x6, params_8x6, variant):
        x = StateVector.from_fields(np.zeros((6, 8)), np.zeros((6, 8)), np.full((6, 8), 5000.0))
        np.testing.assert_array_equal(step(x, grid_8x6, params_8x6, variant).data, x.data)


class TestIntegration:

    def test_zero_dt_is_identity(self, grid_8x6, params_8x6, rng):
        x = random_state(rng, grid_8x6)
        np.testing.assert_array_equal(step(x, grid_8x6, params_8x6.with_dt(0.0)).data, x)

    def test_zero_steps_returns_copy(self, grid_8x6, params_8x6, rng):
        x = StateVector(random_state(rng, grid_8x6), 8, 6)
        out = integrate(x, grid_8x6, params_8x6.with_steps(0))
        np.testing.assert_array_equal(out.data, x.data)
        out.data[0] += 1.0
        assert out.data[0] != x.data[0]

    def test_integrate_is_repeated_step(self, grid_8x6, params_8x6, rng):
        x = random_state(rng, grid_8x6)
        y = x
        for _ in range(params_8x6.msteps):
            y = step(y, grid_8x6, params_8x6).data
        np.testing.assert_array_equal(integrate(x, grid_8x6, params_8x6).data, y)

    def test_trajectory_length(self, grid_8x6, params_8x6, rng):
        x = random_state(rng, grid_8x6)
        states = trajectory(x, grid_8x6, params_8x6, 4)
        assert len(states) == 5
        np.testing.assert_array_equal(states[0], x)

    def test_non_finite_state(self, grid_8x6, params_8x6, rng):
        x = random_state(rng, grid_8x6)
        x[3] = np.nan
        with pytest.raises(StateError):
            step(x, grid_8x6, params_8x6)

    def test_grid_mismatch(self, grid_8x6, params_8x6):
        with pytest.raises(StateError):
            step(StateVector(np.zeros(3 * 12), 4, 3), grid_8x6, params_8x6)

    def test_drift_grows_with_dt(self):
        grid = build_grid(72, 36)
        x0 = synth_initial(0, grid)
        drifts = [relative_drift(x0, grid, ModelParams(dt=dt)) for dt in (50.0, 100.0, 150.0)]
        assert 0 < drifts[0] < drifts[1] < drifts[2]
        assert 1.2 <= drifts[1] / drifts[0] <= 2.2


class TestSynthInitial:

    def test_deterministic(self, grid_8x6):
        a = synth_initial(7, grid_8x6)
        b = synth_initial(7, grid_8x6)
        np.testing.assert_array_equal(a.data, b.data)
        assert not np.array_equal(a.data, synth_initial(8, grid_8x6).data)

    def test_resting_with_scaled_height(self):
        grid = build_grid(72, 36)
        x0 = synth_initial(0, grid, FieldParams(h_mean=5000.0, h_std=10.0))
        assert not np.any(x0.u)
        assert not np.any(x0.v)
        assert x0.h.mean() == pytest.approx(5000.0, abs=1e-9)
        assert x0.h.std() == pytest.approx(10.0, rel=1e-12)

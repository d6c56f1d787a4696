import math

import numpy as np
import pytest

from app.utils.error_models import (
    Problem,
    TsvdFailure,
    TsvdPrecon,
    _householder_basis,
    apply_Binv,
    apply_Rinv,
    as_problem,
    build_background_cov,
    build_obs_operator,
    build_obs_weights,
    tsvd,
)
from app.utils.errors import PreconditionerError, ProblemError, StateError
from app.utils.sphere_grid import build_grid
from app.utils.swe_model import StateVector, synth_initial


@pytest.fixture
def background(grid_8x6):
    return synth_initial(2, grid_8x6)


class TestProblem:

    def test_ids(self):
        assert as_problem(1) is Problem.ROUNDED_2
        assert as_problem(Problem.SPARSE_NOISE) is Problem.SPARSE_NOISE
        assert Problem.ROUNDED_1.decimals == 1
        assert Problem.SPARSE_SCALED_NOISE.decimals is None
        assert Problem.SPARSE_SCALED_NOISE.sparse
        assert not Problem.ROUNDED_2.sparse

    @pytest.mark.parametrize('bad', [0, 5, 'two', None])
    def test_unknown(self, bad):
        with pytest.raises(ProblemError):
            as_problem(bad)


class TestBackgroundCov:

    def test_anomaly_about_global_mean(self, background):
        cov = build_background_cov(background)
        assert cov.nu == pytest.approx(background.data.mean(), rel=1e-14)
        np.testing.assert_allclose(cov.err_vector, background.data - cov.nu)
        assert not cov.degenerate

    def test_apply_is_rank_one(self, background, rng):
        cov = build_background_cov(background)
        e = cov.err_vector
        y = rng.standard_normal(e.size)
        np.testing.assert_allclose(cov.apply(y), np.outer(e, e) @ y, rtol=1e-12)

    def test_non_finite(self, background):
        data = background.data.copy()
        data[5] = np.nan
        with pytest.raises(StateError):
            build_background_cov(data)


class TestTsvd:

    def test_leading_pair_matches_dense_svd(self, background):
        cov = build_background_cov(background)
        precon = tsvd(cov, 1)
        assert isinstance(precon, TsvdPrecon)
        assert precon.usable
        u, s, _ = np.linalg.svd(np.outer(cov.err_vector, cov.err_vector))
        assert precon.singular_values[0] == pytest.approx(s[0], rel=1e-12)
        assert abs(precon.singular_vectors[:, 0] @ u[:, 0]) == pytest.approx(1.0, rel=1e-12)
        # everything past the first value is round-off of a rank-one matrix
        assert s[1] / s[0] < 1e-13

    @pytest.mark.parametrize('nsvs', [2, 4, 12])
    def test_beyond_rank_fails(self, background, nsvs):
        result = tsvd(build_background_cov(background), nsvs)
        assert isinstance(result, TsvdFailure)
        assert not result
        assert result.reason == 'rank'
        assert result.nsvs == nsvs
        assert result.singular_values[0] > 0
        assert not np.any(result.singular_values[1:])

    def test_constant_background_is_degenerate(self, grid_8x6):
        result = tsvd(build_background_cov(np.full(grid_8x6.state_size, 3.0)), 1)
        assert isinstance(result, TsvdFailure)
        assert result.reason == 'degenerate'

    def test_zero_tolerance_drops_exact_zeros(self, background, rng):
        cov = build_background_cov(background)
        precon = tsvd(cov, 2, rel_tol=0.0)
        assert isinstance(precon, TsvdPrecon)
        np.testing.assert_array_equal(precon.retained, [True, False])
        y = rng.standard_normal(cov.err_vector.size)
        np.testing.assert_allclose(apply_Binv(precon, y), apply_Binv(tsvd(cov, 1), y), rtol=1e-12)

    def test_bad_counts(self, background):
        cov = build_background_cov(background)
        with pytest.raises(PreconditionerError):
            tsvd(cov, 0)
        with pytest.raises(PreconditionerError):
            tsvd(cov, cov.err_vector.size + 1)

    def test_pseudo_inverse(self, background, rng):
        cov = build_background_cov(background)
        precon = tsvd(cov, 1)
        y = rng.standard_normal(cov.err_vector.size)
        e = cov.err_vector
        expected = e * (e @ y) / (e @ e) ** 2
        np.testing.assert_allclose(apply_Binv(precon, y), expected, rtol=1e-12)
        # B B^+ B = B on the range of B
        np.testing.assert_allclose(cov.apply(apply_Binv(precon, cov.apply(y))), cov.apply(y),
                                   rtol=1e-10)

    def test_pseudo_inverse_needs_usable_precon(self, background):
        failure = tsvd(build_background_cov(background), 3)
        with pytest.raises(PreconditionerError):
            apply_Binv(failure, background.data)

    def test_householder_basis_is_orthonormal(self, rng):
        u0 = rng.standard_normal(10)
        u0 /= np.linalg.norm(u0)
        q = _householder_basis(u0, 4)
        np.testing.assert_allclose(q[:, 0], u0, atol=1e-15)
        np.testing.assert_allclose(q.T @ q, np.eye(4), atol=1e-14)


class TestObservationModels:

    def test_sparse_mask(self):
        grid = build_grid(5, 2)
        op = build_obs_operator(2, grid)
        np.testing.assert_array_equal(np.flatnonzero(op.mask), [0, 5, 10, 15, 20, 25])
        assert op.density == 0.2

    def test_sparse_mask_count(self):
        grid = build_grid(72, 36)
        op = build_obs_operator(Problem.SPARSE_SCALED_NOISE, grid)
        assert np.count_nonzero(op.mask) == math.ceil(grid.state_size / 5)

    @pytest.mark.parametrize('problem', [1, 3])
    def test_full_mask(self, grid_8x6, problem):
        op = build_obs_operator(problem, grid_8x6)
        assert op.density == 1.0

    def test_mask_apply(self, grid_8x6, rng):
        op = build_obs_operator(2, grid_8x6)
        y = rng.standard_normal(grid_8x6.state_size)
        out = op.apply(y)
        assert not np.any(out[op.mask == 0])
        np.testing.assert_array_equal(out[op.mask == 1], y[op.mask == 1])

    def test_weights(self, grid_8x6):
        weights = build_obs_weights(grid_8x6)
        n = grid_8x6.size
        assert np.all(weights.rinv[:n] == 1e-6)
        assert np.all(weights.rinv[n:] == 1.0)
        y = np.ones(grid_8x6.state_size)
        np.testing.assert_array_equal(apply_Rinv(weights, StateVector(y, 8, 6)), weights.rinv)
        with pytest.raises(StateError):
            apply_Rinv(weights, np.ones(7))

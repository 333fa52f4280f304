import numpy as np
import pytest
from scipy import stats

from services.errors import InputError
from services.sampling import (make_rng, pg_mean, pg_variance, sample_bernoulli, sample_gamma, sample_normal,
                               sample_pg, sample_pg_chunked, sample_pg_truncated, spawn_streams)

C_GRID = [0.0, 0.5, 1.0, 2.0, 5.0, 10.0]


class TestStreams:

    def test_same_seed_same_draws(self):
        np.testing.assert_array_equal(make_rng(7).normal(size=5), make_rng(7).normal(size=5))

    def test_child_streams_differ_and_repeat(self):
        a, b = spawn_streams(make_rng(11), 2)
        first, second = a.random(4), b.random(4)
        assert not np.array_equal(first, second)
        np.testing.assert_array_equal(first, spawn_streams(make_rng(11), 2)[0].random(4))

    def test_bernoulli_frequency_and_range(self, rng):
        draws = sample_bernoulli(rng, np.full(20000, 0.3))
        assert set(np.unique(draws)) <= {0.0, 1.0}
        assert draws.mean() == pytest.approx(0.3, abs=0.02)
        np.testing.assert_array_equal(sample_bernoulli(rng, np.array([0.0, 1.0])), [0.0, 1.0])
        with pytest.raises(InputError):
            sample_bernoulli(rng, np.array([1.2]))

    def test_invalid_parameters(self, rng):
        with pytest.raises(InputError):
            sample_gamma(rng, 0.0, 1.0)
        with pytest.raises(InputError):
            sample_gamma(rng, 1.0, -1.0)
        with pytest.raises(InputError):
            sample_normal(rng, 0.0, 0.0)


class TestPolyaGammaMoments:

    def test_mean_limit_and_formula(self):
        assert pg_mean(0.0) == pytest.approx(0.25)
        assert pg_mean(1e-6) == pytest.approx(0.25, rel=1e-9)
        for c in [0.5, 2.0, 10.0, -3.0]:
            assert pg_mean(c) == pytest.approx(np.tanh(abs(c) / 2) / (2 * abs(c)), rel=1e-14)

    def test_variance_limit_and_continuity(self):
        assert pg_variance(0.0) == pytest.approx(1.0 / 24.0)
        assert pg_variance(0.999e-3) == pytest.approx(pg_variance(1.001e-3), rel=1e-6)

    def test_draws_are_positive(self, rng):
        draws = sample_pg(rng, np.repeat(C_GRID, 2000))
        assert (draws > 0).all()

    @pytest.mark.parametrize('c', C_GRID)
    def test_sample_mean_and_variance(self, c):
        rng = make_rng(int(c * 10) + 1)
        n = 40000
        draws = sample_pg(rng, np.full(n, c))
        se = np.sqrt(pg_variance(c) / n)
        assert abs(draws.mean() - pg_mean(c)) < 4 * se
        assert draws.var() == pytest.approx(pg_variance(c), rel=0.1)

    @pytest.mark.slow
    @pytest.mark.parametrize('c', C_GRID)
    def test_sample_mean_million_draws(self, c):
        rng = make_rng(100 + int(c * 10))
        n = 10 ** 6
        draws = sample_pg(rng, np.full(n, c))
        assert abs(draws.mean() - pg_mean(c)) < 3 * np.sqrt(pg_variance(c) / n)

    def test_symmetric_in_c(self):
        rng = make_rng(5)
        positive = sample_pg(rng, np.full(20000, 1.7))
        negative = sample_pg(rng, np.full(20000, -1.7))
        assert stats.ks_2samp(positive, negative).pvalue > 0.01

    def test_agrees_with_truncated_series(self):
        rng = make_rng(6)
        exact = sample_pg(rng, np.full(20000, 1.5))
        approx = sample_pg_truncated(rng, np.full(20000, 1.5))
        assert stats.ks_2samp(exact, approx).pvalue > 0.001

    def test_scalar_in_scalar_out(self, rng):
        assert isinstance(sample_pg(rng, 0.3), float)
        assert sample_pg(rng, np.empty((0,))).shape == (0,)
        assert isinstance(sample_pg_truncated(rng, 0.3), float)

    def test_rejects_unsupported_arguments(self, rng):
        with pytest.raises(InputError):
            sample_pg(rng, 1.0, b=2)
        with pytest.raises(InputError):
            sample_pg(rng, np.array([1.0, np.inf]))


class TestChunkedDraws:

    def test_thread_count_does_not_change_draws(self):
        c = np.linspace(-4, 4, 1000)
        serial = sample_pg_chunked(make_rng(9), c, chunk_size=128, threads=1)
        parallel = sample_pg_chunked(make_rng(9), c, chunk_size=128, threads=4)
        np.testing.assert_array_equal(serial, parallel)

    def test_shape_and_positivity(self, rng):
        draws = sample_pg_chunked(rng, np.zeros(333), chunk_size=100)
        assert draws.shape == (333,)
        assert (draws > 0).all()

import numpy as np
import pytest
from hypothesis import given, settings

from models import TRModel
from services.data_io import all_indices
from services.errors import CapacityError, InputError
from services.sampling import make_rng
from services.tensor_ring import (absorb_weights, check_indices, core_coefficients, eval_entries, eval_entry,
                                  factor_magnitudes, grow_rank, matched_core_scale, prune_rank, random_model,
                                  reconstruct_dense, rotate, subchain_slice, subchains, weight_coefficients)
from tests.strategies import models_with_indices, tr_models


def _entry_by_loop(model, index):
    product = np.eye(model.ranks[-1])
    for d, i in enumerate(index):
        product = product @ model.cores[d][i] @ np.diag(model.weights[d])
    return float(np.trace(product))


class TestEvaluation:

    def test_eval_entry_matches_explicit_product(self, small_model):
        for index in [(0, 0, 0), (2, 3, 1), (1, 2, 0)]:
            assert eval_entry(small_model, index) == pytest.approx(_entry_by_loop(small_model, index), rel=1e-12)

    def test_dense_reconstruction_agrees_with_entries(self, small_model):
        dense = reconstruct_dense(small_model)
        idx = all_indices(small_model.shape)
        np.testing.assert_allclose(dense.reshape(-1), eval_entries(small_model, idx), rtol=1e-12, atol=1e-12)

    def test_single_mode_ring_is_a_trace(self, rng):
        model = random_model((4,), 3, rng).replace(weights=[rng.normal(size=3)])
        expected = [np.trace(model.cores[0][i] @ np.diag(model.weights[0])) for i in range(4)]
        np.testing.assert_allclose(eval_entries(model, [[0], [1], [2], [3]]), expected, rtol=1e-12)

    def test_out_of_bounds_index_is_rejected(self, small_model):
        with pytest.raises(InputError):
            eval_entry(small_model, (3, 0, 0))
        with pytest.raises(InputError):
            check_indices(small_model.shape, [[0, 0]])

    def test_dense_guard(self, small_model):
        with pytest.raises(CapacityError):
            reconstruct_dense(small_model, max_entries=10)

    def test_ring_must_close(self, rng):
        cores = (rng.normal(size=(2, 2, 3)), rng.normal(size=(2, 3, 3)))
        with pytest.raises(InputError):
            TRModel(cores, (np.ones(3), np.ones(3)))


class TestAlgebraProperties:

    @settings(max_examples=200, deadline=None)
    @given(models_with_indices())
    def test_weight_absorption_is_equivalent(self, case):
        model, idx = case
        absorbed = absorb_weights(model)
        assert all(np.array_equal(w, np.ones_like(w)) for w in absorbed.weights)
        np.testing.assert_allclose(eval_entries(absorbed, idx), eval_entries(model, idx), rtol=1e-10, atol=1e-10)

    @settings(max_examples=200, deadline=None)
    @given(models_with_indices())
    def test_trace_cyclicity(self, case):
        model, idx = case
        for k in range(model.ndim):
            rotated_idx = np.roll(idx, -k, axis=1)
            np.testing.assert_allclose(eval_entries(rotate(model, k), rotated_idx), eval_entries(model, idx),
                                       rtol=1e-10, atol=1e-10)

    @settings(max_examples=200, deadline=None)
    @given(models_with_indices())
    def test_weight_coefficients_reproduce_entries(self, case):
        model, idx = case
        x = eval_entries(model, idx)
        for d in range(model.ndim):
            a = weight_coefficients(model, d, idx)
            np.testing.assert_allclose(a @ model.weights[d], x, rtol=1e-9, atol=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(models_with_indices())
    def test_core_coefficients_reproduce_entries(self, case):
        model, idx = case
        x = eval_entries(model, idx)
        for d in range(model.ndim):
            c = core_coefficients(model, d, idx)
            slices = model.cores[d][idx[:, d]]
            assert c.shape == slices.shape
            np.testing.assert_allclose(np.einsum('nab,nab->n', slices, c), x, rtol=1e-9, atol=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(models_with_indices(min_modes=2))
    def test_subchain_closes_the_ring(self, case):
        model, idx = case
        for d in range(model.ndim):
            sub = subchains(model, d, idx)
            assert sub.shape == (idx.shape[0], model.ranks[d], model.ranks[d - 1])
            own = model.cores[d][idx[:, d]] * model.weights[d][None, None, :]
            np.testing.assert_allclose(np.trace(own @ sub, axis1=1, axis2=2), eval_entries(model, idx),
                                       rtol=1e-9, atol=1e-9)


class TestRankChanges:

    @settings(max_examples=50, deadline=None)
    @given(tr_models(min_modes=2))
    def test_growing_with_zero_weight_keeps_entries(self, model):
        rng = np.random.default_rng(0)
        idx = all_indices(model.shape)
        for d in range(model.ndim):
            grown = grow_rank(model, d, 1.0, rng, weight=0.0)
            assert grown.ranks[d] == model.ranks[d] + 1
            np.testing.assert_allclose(eval_entries(grown, idx), eval_entries(model, idx), rtol=1e-10, atol=1e-10)

    def test_pruning_a_zero_weight_keeps_entries(self, small_model, rng):
        weights = [np.array(w) for w in small_model.weights]
        weights[1][0] = 0.0
        model = small_model.replace(weights=weights)
        pruned = prune_rank(model, 1, 0)
        assert pruned.ranks == (2, 2, 2)
        idx = all_indices(model.shape)
        np.testing.assert_allclose(eval_entries(pruned, idx), eval_entries(model, idx), rtol=1e-12, atol=1e-12)

    def test_cannot_prune_last_factor(self, rng):
        model = random_model((2, 2), 1, rng)
        with pytest.raises(InputError):
            prune_rank(model, 0, 0)

    def test_grow_draws_weight_from_precision(self, small_model):
        rng = np.random.default_rng(3)
        draws = [grow_rank(small_model, 0, 1.0, rng, weight_precision=100.0).weights[0][-1] for _ in range(2000)]
        assert np.std(draws) == pytest.approx(0.1, rel=0.1)

    def test_grow_is_deterministic_for_a_seed(self, small_model):
        first = grow_rank(small_model, 2, 0.5, make_rng(8))
        second = grow_rank(small_model, 2, 0.5, make_rng(8))
        for a, b in zip(first.cores + first.weights, second.cores + second.weights):
            np.testing.assert_array_equal(a, b)
        assert first.ranks == (2, 3, 3)


class TestSubchainSlice:

    def test_matches_the_batched_product(self, small_model):
        for mode in range(small_model.ndim):
            expected = subchains(small_model, mode, [(2, 1, 0)])[0]
            np.testing.assert_array_equal(subchain_slice(small_model, mode, (2, 1, 0)), expected)


class TestFactorMagnitudes:

    def test_unchanged_when_scale_moves_into_the_cores(self, small_model):
        before = factor_magnitudes(small_model, 0)
        cores = [np.array(c) for c in small_model.cores]
        weights = [np.array(w) for w in small_model.weights]
        cores[0][:, :, 1] *= 4.0
        cores[1][:, 0, :] *= 0.25
        weights[0][0] *= 4.0
        weights[0][1] /= 4.0
        moved = small_model.replace(cores=cores, weights=weights)
        np.testing.assert_allclose(factor_magnitudes(moved, 0), before, rtol=1e-12)
        np.testing.assert_allclose(eval_entries(moved, all_indices(moved.shape)),
                                   eval_entries(small_model, all_indices(small_model.shape)), rtol=1e-10)

    def test_one_magnitude_per_output_factor(self, small_model):
        for mode, rank in enumerate(small_model.ranks):
            assert factor_magnitudes(small_model, mode).shape == (rank,)

    def test_unit_cores_give_the_weights(self, rng):
        model = random_model((3, 2), (2, 2), rng)
        model = model.replace(cores=[np.ones_like(c) for c in model.cores],
                              weights=[np.array([0.5, -2.0]), np.array([1.0, 1.0])])
        np.testing.assert_allclose(factor_magnitudes(model, 0), [0.5, 2.0])


class TestMatchedScale:

    def test_closed_form(self):
        scale = matched_core_scale(3, 4, 2.5)
        assert 4 ** 3 * scale ** 6 == pytest.approx(2.5)
        assert matched_core_scale(4, 1) == pytest.approx(1.0)
        with pytest.raises(InputError):
            matched_core_scale(3, 2, 0.0)

    @pytest.mark.slow
    def test_entry_second_moment_by_simulation(self):
        rng = make_rng(17)
        scale = matched_core_scale(3, 4, 2.5)
        draws = [eval_entry(random_model((1, 1, 1), 4, rng, scale=scale), (0, 0, 0)) for _ in range(20000)]
        assert np.mean(np.square(draws)) == pytest.approx(2.5, rel=0.15)

"""Tests for time grids and the counter-addressed Brownian store."""

import numpy as np
import pytest
from scipy import stats

from fbsdekit._philox import HAVE_NUMBA, uniform_stream
from fbsdekit.brownian import (
    coarsen_increments,
    make_time_grid,
    sample_fine_increments,
)
from fbsdekit.errors import InvalidArgument


class TestTimeGrid:
    def test_quarter_horizon_four_steps(self):
        grid = make_time_grid(0.25, 4)
        assert grid.h == 0.0625
        assert np.array_equal(grid.nodes, [0.0, 0.0625, 0.125, 0.1875, 0.25])

    def test_single_step(self):
        grid = make_time_grid(1.0, 1)
        assert np.array_equal(grid.nodes, [0.0, 1.0])

    def test_sweep_resolution(self):
        assert make_time_grid(0.25, 32).h == 0.0078125

    def test_nodes_increasing_and_endpoints(self):
        grid = make_time_grid(0.7, 13)
        assert np.all(np.diff(grid.nodes) > 0)
        assert grid.nodes[0] == 0.0
        assert grid.nodes[-1] == 0.7
        assert len(grid.nodes) == 14

    @pytest.mark.parametrize("horizon,n", [(0.25, 0), (0.0, 4), (-1.0, 4)])
    def test_invalid_arguments(self, horizon, n):
        with pytest.raises(InvalidArgument):
            make_time_grid(horizon, n)


class TestUniformStream:
    def test_backends_bit_identical(self):
        if not HAVE_NUMBA:
            pytest.skip("numba not installed")
        a = uniform_stream(1234567, 5, 17, 23, 2, use_numba=True)
        b = uniform_stream(1234567, 5, 17, 23, 2, use_numba=False)
        assert np.array_equal(a, b)

    def test_open_unit_interval(self):
        u = uniform_stream(3, 0, 50, 64, 1)
        assert u.min() > 0.0
        assert u.max() < 1.0


class TestStore:
    def test_regeneration_bit_identical(self):
        s1 = sample_fine_increments(42, 32, 128, 2, 0.5)
        s2 = sample_fine_increments(42, 32, 128, 2, 0.5)
        assert np.array_equal(s1.increments, s2.increments)

    def test_seeds_differ(self):
        a = sample_fine_increments(1, 16, 64, 1, 0.25).increments
        b = sample_fine_increments(2, 16, 64, 1, 0.25).increments
        assert not np.array_equal(a, b)

    def test_window_matches_full_slice(self):
        # Counter addressing: a sub-window equals the slice of the full
        # array without generating anything outside it.
        store = sample_fine_increments(7, 64, 256, 3, 0.25)
        full = store.increments
        assert np.array_equal(store.fine_increments(37, 101), full[:, 37:101])
        assert np.array_equal(store.fine_increments(0, 1), full[:, 0:1])
        assert np.array_equal(store.fine_increments(255, 256), full[:, 255:256])

    def test_invalid_arguments(self):
        with pytest.raises(InvalidArgument):
            sample_fine_increments(1, 0, 8, 1, 0.25)
        with pytest.raises(InvalidArgument):
            sample_fine_increments(1, 8, 8, 1, -0.25)
        store = sample_fine_increments(1, 4, 8, 1, 0.25)
        with pytest.raises(InvalidArgument):
            store.fine_increments(3, 9)

    def test_moments_at_experiment_scale(self):
        # 4 standard errors for the mean; 1% relative for the variance.
        horizon, fine_n, num_paths = 0.25, 20480, 15000
        store = sample_fine_increments(7, num_paths, fine_n, 1, horizon)
        total = 0.0
        total_sq = 0.0
        count = num_paths * fine_n
        for k0 in range(0, fine_n, 1024):
            block = store.fine_increments(k0, k0 + 1024)
            total += block.sum()
            total_sq += np.square(block).sum()
        var_target = horizon / fine_n
        mean_bound = 4.0 * np.sqrt(var_target) / np.sqrt(count)
        assert abs(total / count) <= mean_bound
        sample_var = total_sq / count - (total / count) ** 2
        assert abs(sample_var - var_target) <= 0.01 * var_target

    def test_kolmogorov_smirnov(self):
        horizon, fine_n, num_paths = 0.25, 8192, 128
        store = sample_fine_increments(11, num_paths, fine_n, 1, horizon)
        sample = store.increments.ravel() / np.sqrt(horizon / fine_n)
        n = sample.size
        assert n >= 10**6
        statistic = stats.kstest(sample, "norm").statistic
        critical = np.sqrt(-0.5 * np.log(0.0005)) / np.sqrt(n)
        assert statistic < critical


class TestCoarsen:
    def test_identity(self):
        store = sample_fine_increments(3, 8, 32, 2, 0.25)
        assert np.array_equal(coarsen_increments(store, 32), store.increments)

    def test_two_window_definition(self):
        store = sample_fine_increments(5, 6, 4, 1, 1.0)
        fine = store.increments
        coarse = coarsen_increments(store, 2)
        assert np.array_equal(coarse[:, 0], fine[:, 0] + fine[:, 1])
        assert np.array_equal(coarse[:, 1], fine[:, 2] + fine[:, 3])

    @pytest.mark.parametrize("n", [1, 2, 4, 8, 16])
    def test_telescoping_exact(self, n):
        store = sample_fine_increments(9, 20, 16, 3, 0.5)
        coarse = coarsen_increments(store, n)
        assert np.array_equal(coarse.sum(axis=1), store.increments.sum(axis=1))

    def test_divisor_chain_consistency(self):
        # Coarsening to n2 then window-summing equals coarsening to n1,
        # exactly, for n1 | n2 | fine_n; fresh stores avoid cache reuse.
        n1, n2 = 5, 20
        via_n2 = coarsen_increments(sample_fine_increments(13, 12, 80, 2, 0.3), n2)
        direct = coarsen_increments(sample_fine_increments(13, 12, 80, 2, 0.3), n1)
        summed = via_n2.reshape(12, n1, n2 // n1, 2).sum(axis=2)
        assert np.array_equal(summed, direct)

    def test_cache_derivation_matches_streaming(self):
        warm = sample_fine_increments(21, 10, 64, 2, 0.25)
        coarsen_increments(warm, 32)  # populates the cache
        derived = coarsen_increments(warm, 8)
        fresh = coarsen_increments(sample_fine_increments(21, 10, 64, 2, 0.25), 8)
        assert np.array_equal(derived, fresh)

    def test_non_divisor_raises(self):
        store = sample_fine_increments(1, 4, 20, 1, 0.25)
        with pytest.raises(InvalidArgument):
            coarsen_increments(store, 3)

    def test_coarse_variance(self):
        store = sample_fine_increments(17, 4000, 64, 1, 0.25)
        coarse = coarsen_increments(store, 4)
        assert np.allclose(coarse.var(), 0.25 / 4, rtol=0.05)

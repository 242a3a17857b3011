import itertools

import numpy as np
import pytest

from hsad.dictionary import init_dictionary, kmeans
from hsad.hsi_io import SyntheticSceneSpec, cube_to_matrix, generate_synthetic_scene


class TestKmeans:
    def test_single_cluster_is_mean(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((4, 30))
        result = kmeans(x, k=1, seed=0)
        assert np.allclose(result.centroids[:, 0], x.mean(axis=1))
        assert (result.assignments == 0).all()

    def test_one_cluster_per_pixel(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((3, 8))
        result = kmeans(x, k=8, seed=0)
        assert result.inertia == 0.0
        # centroids are the points themselves, in some order
        got = {tuple(result.centroids[:, j]) for j in range(8)}
        want = {tuple(x[:, j]) for j in range(8)}
        assert got == want

    def test_two_blobs_match_exhaustive_optimum(self):
        # brute force over every 2-partition of 10 points
        rng = np.random.default_rng(2)
        a = rng.normal(0.0, 0.2, size=(2, 5)) + np.array([[5.0], [5.0]])
        b = rng.normal(0.0, 0.2, size=(2, 5)) - np.array([[5.0], [5.0]])
        x = np.hstack([a, b])
        n = x.shape[1]
        best = np.inf
        for bits in itertools.product([0, 1], repeat=n):
            bits = np.array(bits, dtype=bool)
            if bits.all() or (~bits).all():
                continue
            inertia = 0.0
            for side in (bits, ~bits):
                pts = x[:, side]
                inertia += np.sum((pts - pts.mean(axis=1, keepdims=True)) ** 2)
            best = min(best, inertia)
        result = kmeans(x, k=2, seed=3)
        assert abs(result.inertia - best) < 1e-6

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((5, 40))
        a = kmeans(x, k=4, seed=9)
        b = kmeans(x, k=4, seed=9)
        assert np.array_equal(a.centroids, b.centroids)
        assert np.array_equal(a.assignments, b.assignments)
        assert a.inertia == b.inertia

    def test_every_pixel_nearest_its_centroid(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((3, 50))
        result = kmeans(x, k=5, seed=1)
        d2 = ((x[:, :, None] - result.centroids[:, None, :]) ** 2).sum(axis=0)
        assert np.array_equal(np.argmin(d2, axis=1), result.assignments)

    def test_inertia_history_nonincreasing(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((4, 80))
        result = kmeans(x, k=6, seed=2)
        hist = result.inertia_history
        assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))

    def test_duplicate_points_trigger_empty_cluster_path(self):
        # more clusters than distinct points forces empty-cluster reseeding
        x = np.repeat(np.arange(3.0)[None, :], 2, axis=0)
        x = np.hstack([x, x])  # 6 points, 3 distinct
        result = kmeans(x, k=4, seed=0)
        assert np.isfinite(result.centroids).all()
        assert result.inertia >= 0.0

    def test_bad_arguments(self):
        x = np.zeros((2, 3))
        with pytest.raises(ValueError):
            kmeans(x, k=0)
        with pytest.raises(ValueError):
            kmeans(x, k=4)
        with pytest.raises(ValueError):
            kmeans(x, k=2, max_iters=0)


class TestInitDictionary:
    def test_atoms_unit_norm(self, standard_matrix):
        x, _ = standard_matrix
        d0, _ = init_dictionary(x, k=15, seed=0)
        assert np.max(np.abs(np.linalg.norm(d0, axis=0) - 1.0)) < 1e-12

    def test_repeated_spectra_recovered(self):
        rng = np.random.default_rng(6)
        atoms = rng.standard_normal((6, 3))
        x = np.hstack([np.repeat(atoms[:, [j]], 10, axis=1) for j in range(3)])
        d0, l0 = init_dictionary(x, k=3, seed=0)
        normalized = atoms / np.linalg.norm(atoms, axis=0)
        got = {tuple(np.round(d0[:, j], 9)) for j in range(3)}
        want = {tuple(np.round(normalized[:, j], 9)) for j in range(3)}
        assert got == want
        # the init ridge weight (1e-6) bounds the relative fit residual
        assert np.linalg.norm(x - d0 @ l0) / np.linalg.norm(x) < 5e-6

    def test_low_rank_scene_reconstruction(self):
        spec = SyntheticSceneSpec(
            bands=20, rows=15, cols=15, background_rank=3, n_anomalies=0,
            anomaly_fraction=0.01, noise_sigma=0.0, seed=4,
        )
        cube, _ = generate_synthetic_scene(spec)
        x = cube_to_matrix(cube)
        d0, l0 = init_dictionary(x, k=6, seed=0)
        rel = np.linalg.norm(x.values - d0 @ l0) / np.linalg.norm(x.values)
        assert rel < 0.05

    def test_bit_identical_across_runs(self, standard_matrix):
        x, _ = standard_matrix
        d0a, l0a = init_dictionary(x, k=8, seed=5)
        d0b, l0b = init_dictionary(x, k=8, seed=5)
        assert np.array_equal(d0a, d0b)
        assert np.array_equal(l0a, l0b)

    def test_starting_objective_finite(self, standard_matrix):
        from hsad.admm import AdmmConfig, LrrState, objective

        x, _ = standard_matrix
        d0, l0 = init_dictionary(x, k=15, seed=0)
        state = LrrState.initial(d0, l0, n_bands=x.bands, mu=1.0)
        value = objective(x, state, AdmmConfig())
        assert np.isfinite(value) and value >= 0.0

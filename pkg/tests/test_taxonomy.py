import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morphogen import network, taxonomy
from morphogen.errors import KTooLarge, MissingKnownRows, PerplexityInfeasible
from morphogen.network import ArchConfig
from morphogen.taxonomy import GENERATED, CodeMatrix


def toy_codes(rows, labels=None):
    rows = np.asarray(rows, dtype=np.float32)
    if labels is None:
        labels = np.full(rows.shape[0], GENERATED, dtype=np.int16)
    return CodeMatrix(rows=rows, labels=np.asarray(labels, dtype=np.int16))


def gaussian_blobs(centers, per_cloud, spread, seed):
    rng = np.random.default_rng(seed)
    rows, labels = [], []
    for i, c in enumerate(centers):
        rows.append(rng.normal(c, spread, size=(per_cloud, len(c))))
        labels += [i] * per_cloud
    return np.concatenate(rows), np.array(labels)


class TestExtractFeatures:
    @pytest.fixture(scope="class")
    def params(self):
        return network.init_params(
            ArchConfig(coder_layers=((4, 5, 1), (8, 5, 1), (8, 5, 1)), rng_seed=0)
        )

    def test_zero_image_zero_row(self, params):
        codes = taxonomy.extract_features(params, np.zeros((1, 12, 12)))
        assert (codes.rows[0] == 0).all()

    def test_row_dimensionality(self, params):
        codes = taxonomy.extract_features(params, np.zeros((2, 12, 12)))
        assert codes.rows.shape == (2, 8 * 12 * 12)

    def test_identical_images_identical_rows(self, params):
        x = np.random.default_rng(3).random((12, 12))
        codes = taxonomy.extract_features(params, np.stack([x, x]))
        np.testing.assert_array_equal(codes.rows[0], codes.rows[1])

    def test_rows_match_single_image_encode(self, params):
        x = np.random.default_rng(4).random((12, 12))
        codes = taxonomy.extract_features(params, x[None])
        expected = network.encode(params, x).ravel()
        np.testing.assert_allclose(codes.rows[0], expected.astype(np.float32))

    def test_labels_carried(self, params):
        codes = taxonomy.extract_features(params, np.zeros((3, 12, 12)), labels=[2, 5, 9])
        assert codes.labels.tolist() == [2, 5, 9]
        assert not codes.generated_mask.any()


class TestKmeans:
    def test_k1_analytic(self):
        rng = np.random.default_rng(0)
        rows = rng.random((40, 6))
        result = taxonomy.kmeans(toy_codes(rows), k=1, restarts=2, rng_seed=0)
        np.testing.assert_allclose(result.centroids[0], rows.mean(axis=0), atol=1e-5)
        expected = ((rows - rows.mean(axis=0)) ** 2).sum()
        assert result.objective == pytest.approx(expected, rel=1e-5)

    def test_recovers_separated_clouds(self):
        rows, labels = gaussian_blobs([[0] * 5, [40] * 5], per_cloud=30, spread=0.5, seed=1)
        result = taxonomy.kmeans(toy_codes(rows), k=2, restarts=3, rng_seed=0)
        a = result.assignments[labels == 0]
        b = result.assignments[labels == 1]
        assert len(set(a.tolist())) == 1
        assert len(set(b.tolist())) == 1
        assert a[0] != b[0]

    @given(seed=st.integers(0, 40))
    @settings(max_examples=20, deadline=None)
    def test_lloyd_objective_non_increasing(self, seed):
        rng = np.random.default_rng(seed)
        rows = rng.random((50, 4))
        result = taxonomy.kmeans(toy_codes(rows), k=5, restarts=1, rng_seed=seed)
        trace = np.array(result.objective_trace)
        assert (np.diff(trace) <= 1e-6 * np.maximum(trace[:-1], 1.0)).all()

    def test_terminal_assignments_are_fixed_point(self):
        rng = np.random.default_rng(5)
        rows = rng.random((60, 3))
        result = taxonomy.kmeans(toy_codes(rows), k=4, restarts=2, rng_seed=1)
        sq = (rows.astype(np.float64) ** 2).sum(axis=1)
        d = taxonomy._sq_distances_to(rows.astype(np.float32), result.centroids, sq)
        np.testing.assert_array_equal(d.argmin(axis=1), result.assignments)

    def test_restarts_pick_min_objective(self):
        rng = np.random.default_rng(7)
        rows = rng.random((40, 3))
        codes = toy_codes(rows)
        best = taxonomy.kmeans(codes, k=3, restarts=6, rng_seed=3)
        singles = [
            taxonomy.kmeans(codes, k=3, restarts=1, rng_seed=[3, r][0] if False else 3)
            for r in range(1)
        ]
        # the multi-restart objective can never exceed the first restart's
        assert best.objective <= singles[0].objective + 1e-9

    def test_k_too_large(self):
        with pytest.raises(KTooLarge):
            taxonomy.kmeans(toy_codes(np.zeros((3, 2))), k=4)

    def test_deterministic(self):
        rows = np.random.default_rng(9).random((30, 4))
        a = taxonomy.kmeans(toy_codes(rows), k=3, restarts=2, rng_seed=5)
        b = taxonomy.kmeans(toy_codes(rows), k=3, restarts=2, rng_seed=5)
        np.testing.assert_array_equal(a.assignments, b.assignments)
        assert a.objective == b.objective


class TestNoveltyScores:
    def test_row_at_centroid_scores_zero(self):
        rng = np.random.default_rng(2)
        digit_rows = rng.normal(0, 1, size=(40, 4))
        labels = np.array([3] * 20 + [5] * 20)
        centroid3 = digit_rows[:20].mean(axis=0)
        rows = np.concatenate([digit_rows, centroid3[None]])
        codes = toy_codes(rows, list(labels) + [GENERATED])
        scores = taxonomy.novelty_scores(codes)
        assert scores[-1] == pytest.approx(0.0, abs=1e-5)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(4)
        rows = rng.normal(0, 1, size=(60, 6))
        labels = [0] * 20 + [1] * 20 + [GENERATED] * 20
        codes = toy_codes(rows, labels)
        base = taxonomy.novelty_scores(codes)
        q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
        rotated = toy_codes(rows @ q.T, labels)
        np.testing.assert_allclose(taxonomy.novelty_scores(rotated), base, rtol=1e-3)

    def test_missing_known_rows(self):
        with pytest.raises(MissingKnownRows):
            taxonomy.novelty_scores(toy_codes(np.zeros((3, 2))))

    def test_external_reference(self):
        rng = np.random.default_rng(8)
        ref_rows = rng.normal(0, 1, size=(30, 4))
        ref = toy_codes(ref_rows, [7] * 30)
        near = ref_rows.mean(axis=0)
        far = near + 50.0
        scored = toy_codes(np.stack([near, far]), [GENERATED, GENERATED])
        scores = taxonomy.novelty_scores(scored, reference=ref)
        assert scores[1] > scores[0]
        assert scores[1] > 1.0


class TestBuildReport:
    def make_clustering(self, assignments, rows):
        assignments = np.asarray(assignments)
        k = assignments.max() + 1
        centroids = np.stack([
            rows[assignments == j].mean(axis=0) if (assignments == j).any() else np.zeros(rows.shape[1])
            for j in range(k)
        ])
        return taxonomy.Clustering(
            k=int(k), centroids=centroids, assignments=assignments,
            objective=0.0, iterations_run=1,
        )

    def test_all_generated_cluster_is_new_type(self):
        rows = np.random.default_rng(0).random((6, 3))
        codes = toy_codes(rows, [GENERATED] * 3 + [1, 1, 1])
        clustering = self.make_clustering([0, 0, 0, 1, 1, 1], rows)
        report = taxonomy.build_report(clustering, codes, new_type_threshold=0.9)
        assert report.clusters[0].is_new_type
        assert not report.clusters[1].is_new_type
        assert report.new_type_count == 1

    def test_histograms_sum_to_cluster_sizes(self):
        rng = np.random.default_rng(3)
        rows = rng.random((40, 3))
        labels = rng.choice([GENERATED, 0, 1, 2, 7], size=40).astype(np.int16)
        codes = toy_codes(rows, labels)
        clustering = self.make_clustering(rng.integers(0, 4, size=40), rows)
        report = taxonomy.build_report(clustering, codes, 0.9)
        for cluster in report.clusters:
            assert sum(cluster.histogram.values()) == cluster.size

    def test_medoid_minimizes_summed_distance(self):
        rows = np.array([[0.0, 0], [1, 0], [10, 0]], dtype=np.float32)
        codes = toy_codes(rows, [GENERATED] * 3)
        clustering = self.make_clustering([0, 0, 0], rows)
        report = taxonomy.build_report(clustering, codes, 0.9)
        assert report.clusters[0].medoid_row == 1

    def test_threshold_validated(self):
        rows = np.zeros((2, 2), dtype=np.float32)
        codes = toy_codes(rows)
        clustering = self.make_clustering([0, 0], rows)
        with pytest.raises(ValueError):
            taxonomy.build_report(clustering, codes, 0.4)


class TestEmbed2D:
    def test_three_point_symmetry_preserved(self):
        # three equidistant cluster centers, replicated with tiny symmetric
        # jitter to satisfy the row-count precondition
        base = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]]) * 10
        offsets = np.array([[0.01, 0], [-0.01, 0], [0, 0.01], [0, -0.01]])
        rows = np.concatenate([base[i] + offsets for i in range(3)])
        codes = toy_codes(rows)
        emb = taxonomy.embed_2d(codes, perplexity=3.0, iterations=300, rng_seed=0)
        centers = np.stack([emb.coords[i * 4 : (i + 1) * 4].mean(axis=0) for i in range(3)])
        d = [np.linalg.norm(centers[i] - centers[j]) for i, j in [(0, 1), (1, 2), (0, 2)]]
        assert max(d) / min(d) < 1.05

    def test_kl_decreases_from_initialization(self):
        rows, _ = gaussian_blobs([[0] * 4, [8] * 4, [-8, 8, 0, 0]], 15, 1.0, seed=2)
        emb = taxonomy.embed_2d(toy_codes(rows), perplexity=5.0, iterations=250, rng_seed=1)
        assert emb.kl_divergence < emb.kl_trace[0]
        assert emb.max_perplexity_error <= 1e-4

    def test_deterministic(self):
        rows = np.random.default_rng(6).random((30, 5))
        a = taxonomy.embed_2d(toy_codes(rows), perplexity=5.0, iterations=60, rng_seed=9)
        b = taxonomy.embed_2d(toy_codes(rows), perplexity=5.0, iterations=60, rng_seed=9)
        np.testing.assert_array_equal(a.coords, b.coords)

    def test_perplexity_infeasible(self):
        rows = np.zeros((5, 3), dtype=np.float32)
        with pytest.raises(PerplexityInfeasible):
            taxonomy.embed_2d(toy_codes(rows), perplexity=2.0, iterations=10)
        with pytest.raises(PerplexityInfeasible):
            taxonomy.embed_2d(toy_codes(np.zeros((100, 3), dtype=np.float32)),
                              perplexity=1.0, iterations=10)


class TestTrustworthiness:
    def test_identity_embedding_is_perfect(self):
        rows = np.random.default_rng(0).random((50, 2))
        assert taxonomy.trustworthiness(rows, rows, 12) == pytest.approx(1.0)

    def test_matches_sklearn(self):
        from sklearn.manifold import trustworthiness as sk_trust

        rng = np.random.default_rng(1)
        x = rng.random((80, 7))
        y = rng.random((80, 2))
        ours = taxonomy.trustworthiness(x, y, 12)
        theirs = sk_trust(x, y, n_neighbors=12)
        assert ours == pytest.approx(theirs, abs=1e-9)

    def test_structured_beats_shuffled(self):
        rows, _ = gaussian_blobs([[0, 0, 0], [20, 0, 0], [0, 20, 0]], 20, 1.0, seed=3)
        emb = taxonomy.embed_2d(toy_codes(rows), perplexity=5.0, iterations=200, rng_seed=0)
        good = taxonomy.trustworthiness(rows, emb.coords, 12)
        shuffled = emb.coords[np.random.default_rng(0).permutation(len(rows))]
        bad = taxonomy.trustworthiness(rows, shuffled, 12)
        assert good > bad

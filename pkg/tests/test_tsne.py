import numpy as np
import pytest

from icrag.tsne import ProjectionError, project


def corpus_vectors(n=17, dim=130, seed=123):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0, 100, size=(4, dim))
    rows = [centers[i % 4] + rng.normal(0, 3.0, size=dim) for i in range(n)]
    return np.array(rows)


class TestProjection:
    def test_shapes_and_determinism(self):
        x = corpus_vectors()
        a = project(x, seed=5)
        b = project(x, seed=5)
        assert a.points.shape == (17, 2)
        assert np.array_equal(a.points, b.points)
        assert a.kl_initial == b.kl_initial
        assert a.kl_final == b.kl_final

    def test_different_seed_differs(self):
        x = corpus_vectors()
        a = project(x, seed=1)
        b = project(x, seed=2)
        assert not np.array_equal(a.points, b.points)

    def test_final_kl_not_above_initial(self):
        x = corpus_vectors()
        result = project(x, seed=0)
        assert result.kl_final <= result.kl_initial

    def test_objective_actually_improves(self):
        x = corpus_vectors()
        result = project(x, seed=0)
        assert result.kl_final < 0.5 * result.kl_initial

    def test_duplicates_become_nearest_neighbors(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(0, 100, size=(8, 20))
        x[5] = x[2]  # exact duplicate pair
        result = project(x, seed=3, perplexity=2.0)
        assert result.jittered
        points = result.points
        dists = np.linalg.norm(points - points[2], axis=1)
        dists[2] = np.inf
        assert int(np.argmin(dists)) == 5
        dists = np.linalg.norm(points - points[5], axis=1)
        dists[5] = np.inf
        assert int(np.argmin(dists)) == 2

    def test_three_equidistant_vectors_symmetric_output(self):
        # simplex corner points are pairwise equidistant
        x = np.eye(3) * 10.0
        result = project(x, seed=4, n_iter=800)
        points = result.points
        d01 = np.linalg.norm(points[0] - points[1])
        d02 = np.linalg.norm(points[0] - points[2])
        d12 = np.linalg.norm(points[1] - points[2])
        sides = sorted([d01, d02, d12])
        assert sides[0] > 0
        assert sides[2] / sides[0] < 1.2

    def test_perplexity_clamped(self):
        x = corpus_vectors(n=6)
        result = project(x, seed=0, perplexity=50.0)
        assert result.perplexity_used < (6 - 1) / 3

    def test_too_few_vectors_rejected(self):
        with pytest.raises(ProjectionError):
            project(np.zeros((2, 5)), seed=0)

    def test_clusters_separate(self):
        rng = np.random.default_rng(11)
        a = rng.normal(0, 0.5, size=(6, 40))
        b = rng.normal(50, 0.5, size=(6, 40))
        result = project(np.vstack([a, b]), seed=0)
        pa, pb = result.points[:6], result.points[6:]
        intra = max(
            np.linalg.norm(pa - pa.mean(axis=0), axis=1).max(),
            np.linalg.norm(pb - pb.mean(axis=0), axis=1).max(),
        )
        inter = np.linalg.norm(pa.mean(axis=0) - pb.mean(axis=0))
        assert inter > intra

import numpy as np
import pytest

from ilpc.episodes import Episode, EpisodeSpec, sample_episode, save_episode, true_prior
from ilpc.errors import EpisodeSamplingError
from ilpc.features import BlobSpec, FeatureSet, generate_blobs, load_features


@pytest.fixture(scope="module")
def source():
    return generate_blobs(BlobSpec(5, 8, 1.0, 0.5, 100, seed=0))


class TestSampling:
    def test_standard_1shot_sizes(self, source):
        ep = sample_episode(source, EpisodeSpec(n_way=5, k_shot=1, queries_per_class=15, seed=3))
        assert ep.support_count == 5
        assert ep.query_count == 75
        assert ep.unlabeled_count == 0

    def test_semi_supervised_sizes(self, source):
        spec = EpisodeSpec(n_way=5, k_shot=5, queries_per_class=15, unlabeled_per_class=50, seed=3)
        ep = sample_episode(source, spec)
        assert ep.support_count == 25
        assert ep.query_count == 75
        assert ep.unlabeled_count == 250

    def test_support_has_k_of_each_class(self, source):
        ep = sample_episode(source, EpisodeSpec(n_way=5, k_shot=3, queries_per_class=4, seed=9))
        np.testing.assert_array_equal(np.bincount(ep.support_y), [3] * 5)

    def test_range_mode_counts_within_bounds_and_reproducible(self, source):
        spec = EpisodeSpec(n_way=5, k_shot=1, queries_per_class=(10, 20), seed=21)
        ep1 = sample_episode(source, spec)
        ep2 = sample_episode(source, spec)
        counts = np.bincount(ep1.query_y_hidden, minlength=5)
        assert ((counts >= 10) & (counts <= 20)).all()
        np.testing.assert_array_equal(ep1.query_x, ep2.query_x)
        np.testing.assert_array_equal(ep1.class_map, ep2.class_map)

    def test_splits_are_disjoint(self):
        # every source row is unique, so row identity tracks example identity
        data = np.arange(5 * 30 * 2, dtype=float).reshape(150, 2)
        fs = FeatureSet(data=data, labels=np.repeat(np.arange(5), 30), class_count=5)
        spec = EpisodeSpec(n_way=5, k_shot=2, queries_per_class=10, unlabeled_per_class=5, seed=4)
        ep = sample_episode(fs, spec)
        rows = np.vstack([ep.support_x, ep.query_x, ep.unlabeled_x])
        assert np.unique(rows, axis=0).shape[0] == rows.shape[0]

    def test_insufficient_examples_names_class(self, source):
        spec = EpisodeSpec(n_way=5, k_shot=1, queries_per_class=200, seed=0)
        with pytest.raises(EpisodeSamplingError, match=r"class \d+ has 100"):
            sample_episode(source, spec)

    def test_unlabeled_featureset_rejected(self, source):
        fs = FeatureSet(data=source.data)
        with pytest.raises(EpisodeSamplingError, match="unlabeled"):
            sample_episode(fs, EpisodeSpec(n_way=2, k_shot=1))

    def test_class_coverage_is_uniform(self):
        fs = generate_blobs(BlobSpec(20, 4, 1.0, 0.5, 25, seed=1))
        spec = EpisodeSpec(n_way=5, k_shot=1, queries_per_class=5)
        hits = np.zeros(20)
        n_episodes = 1000
        for s in range(n_episodes):
            ep = sample_episode(fs, EpisodeSpec(n_way=5, k_shot=1, queries_per_class=5, seed=s))
            hits[ep.class_map] += 1
        p = spec.n_way / 20
        sigma = np.sqrt(n_episodes * p * (1 - p))
        assert (np.abs(hits - n_episodes * p) <= 3 * sigma).all()

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            EpisodeSpec(n_way=1, k_shot=1)
        with pytest.raises(ValueError):
            EpisodeSpec(n_way=5, k_shot=0)
        with pytest.raises(ValueError):
            EpisodeSpec(n_way=5, k_shot=1, queries_per_class=(5, 3))
        with pytest.raises(ValueError):
            EpisodeSpec(n_way=5, k_shot=1, queries_per_class=(0, 3))


class TestTruePrior:
    def test_balanced(self, source):
        ep = sample_episode(source, EpisodeSpec(n_way=5, k_shot=1, queries_per_class=15, seed=0))
        np.testing.assert_allclose(true_prior(ep), [0.2] * 5)

    def test_unbalanced_counts(self):
        ep = Episode(
            support_x=np.zeros((5, 2)),
            support_y=np.arange(5),
            query_x=np.zeros((60, 2)),
            query_y_hidden=np.repeat(np.arange(5), [10, 20, 10, 10, 10]),
            unlabeled_x=np.empty((0, 2)),
            unlabeled_y_hidden=np.empty(0, dtype=np.int64),
            class_map=np.arange(5),
        )
        np.testing.assert_allclose(true_prior(ep), [1 / 6, 1 / 3, 1 / 6, 1 / 6, 1 / 6])

    def test_sums_to_one(self, source):
        for seed in range(5):
            ep = sample_episode(
                source, EpisodeSpec(n_way=5, k_shot=1, queries_per_class=(10, 20), seed=seed)
            )
            assert abs(true_prior(ep).sum() - 1.0) < 1e-12


class TestSerialization:
    def test_raw_dump_roundtrip(self, source, tmp_path):
        spec = EpisodeSpec(n_way=5, k_shot=2, queries_per_class=6, unlabeled_per_class=3, seed=5)
        ep = sample_episode(source, spec)
        paths = save_episode(ep, tmp_path / "ep")
        assert len(paths) == 3
        back = load_features(tmp_path / "ep.support.raw", format="raw_f32")
        assert back.data.shape == ep.support_x.shape
        np.testing.assert_array_equal(back.labels, ep.support_y)
        np.testing.assert_allclose(back.data, ep.support_x, atol=1e-6)

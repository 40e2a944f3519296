import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate, stats

from ilpc.errors import FormatError, PreprocessError
from ilpc.features import (
    BlobSpec,
    FeatureSet,
    L2Normalize,
    PCA,
    PowerTransformCenter,
    PreprocessSpec,
    blob_class_means,
    generate_blobs,
    load_features,
    preprocess,
    save_features,
)


class TestFeatureSet:
    def test_rejects_nan(self):
        with pytest.raises(ValueError, match="non-finite"):
            FeatureSet(data=np.array([[1.0, np.nan]]))

    def test_rejects_out_of_range_labels(self):
        with pytest.raises(ValueError, match="labels"):
            FeatureSet(data=np.eye(2), labels=np.array([0, 5]), class_count=2)

    def test_immutable(self):
        fs = FeatureSet(data=np.eye(2))
        with pytest.raises(ValueError):
            fs.data[0, 0] = 3.0


class TestPreprocess:
    def test_empty_spec_is_identity(self):
        fs = FeatureSet(data=np.random.default_rng(0).normal(size=(4, 3)))
        out = preprocess(fs, PreprocessSpec())
        assert out.data is fs.data

    def test_l2_three_four_five(self):
        fs = FeatureSet(data=np.array([[3.0, 4.0]]))
        out = preprocess(fs, PreprocessSpec(steps=(L2Normalize(),)))
        np.testing.assert_allclose(out.data, [[0.6, 0.8]])

    def test_l2_zero_row_unchanged(self):
        fs = FeatureSet(data=np.array([[0.0, 0.0], [1.0, 1.0]]))
        out = preprocess(fs, PreprocessSpec(steps=(L2Normalize(),)))
        np.testing.assert_array_equal(out.data[0], [0.0, 0.0])

    @settings(max_examples=50, deadline=None)
    @given(
        arrays(
            np.float64,
            st.tuples(st.integers(1, 8), st.integers(1, 6)),
            elements=st.floats(-1e6, 1e6, allow_nan=False),
        )
    )
    def test_l2_idempotent(self, data):
        fs = FeatureSet(data=data)
        spec = PreprocessSpec(steps=(L2Normalize(),))
        once = preprocess(fs, spec).data
        twice = preprocess(preprocess(fs, spec), spec).data
        np.testing.assert_allclose(twice, once, atol=1e-12)

    def test_l1_rows_sum_to_one(self):
        fs = FeatureSet(data=np.array([[1.0, -3.0], [2.0, 2.0]]))
        out = preprocess(fs, PreprocessSpec.parse("l1"))
        np.testing.assert_allclose(np.abs(out.data).sum(axis=1), [1.0, 1.0])

    def test_power_transform_rejects_negative(self):
        fs = FeatureSet(data=np.array([[1.0, -0.5]]))
        with pytest.raises(PreprocessError, match="nonnegative"):
            preprocess(fs, PreprocessSpec(steps=(PowerTransformCenter(),)))

    def test_power_transform_centers_columns(self):
        rng = np.random.default_rng(3)
        fs = FeatureSet(data=rng.uniform(0, 2, size=(20, 6)))
        out = preprocess(fs, PreprocessSpec(steps=(PowerTransformCenter(beta=0.5),)))
        # after centering + renormalization rows are unit norm
        np.testing.assert_allclose(np.linalg.norm(out.data, axis=1), np.ones(20), atol=1e-12)

    def test_pca_line_preserves_distances(self):
        # 10 points on a line through 5-D: one principal direction carries
        # all variance, so PCA(1) is an isometry on these points.
        t = np.linspace(-2, 3, 10)
        direction = np.array([1.0, -2.0, 0.5, 3.0, 1.5])
        direction /= np.linalg.norm(direction)
        offset = np.array([0.3, 0.1, -0.2, 0.05, 1.0])
        data = offset + np.outer(t, direction)
        out = preprocess(FeatureSet(data=data), PreprocessSpec(steps=(PCA(target_dim=1),)))
        orig = np.linalg.norm(data[:, None] - data[None, :], axis=2)
        proj = np.abs(out.data[:, None, 0] - out.data[None, :, 0])
        np.testing.assert_allclose(proj, orig, atol=1e-9)

    def test_pca_full_dim_preserves_distances(self):
        rng = np.random.default_rng(11)
        data = rng.normal(size=(40, 7))
        out = preprocess(FeatureSet(data=data), PreprocessSpec(steps=(PCA(target_dim=7),)))
        orig = np.linalg.norm(data[:, None] - data[None, :], axis=2)
        proj = np.linalg.norm(out.data[:, None] - out.data[None, :], axis=2)
        np.testing.assert_allclose(proj, orig, atol=1e-9)

    def test_pca_rank_deficiency_reports_rank(self):
        t = np.linspace(0, 1, 10)
        data = np.outer(t, np.ones(5))  # rank 1 after centering
        with pytest.raises(PreprocessError, match="rank 1"):
            preprocess(FeatureSet(data=data), PreprocessSpec(steps=(PCA(target_dim=3),)))

    def test_pca_deterministic_sign(self):
        rng = np.random.default_rng(5)
        data = rng.normal(size=(30, 4))
        spec = PreprocessSpec(steps=(PCA(target_dim=2),))
        a = preprocess(FeatureSet(data=data), spec).data
        b = preprocess(FeatureSet(data=data), spec).data
        np.testing.assert_array_equal(a, b)

    def test_stats_indices_restrict_population(self):
        rng = np.random.default_rng(8)
        data = rng.uniform(0, 1, size=(30, 4))
        fs = FeatureSet(data=data)
        spec = PreprocessSpec(steps=(PowerTransformCenter(beta=1.0),))
        full = preprocess(fs, spec)
        half = preprocess(fs, spec, stats_indices=np.arange(15))
        assert not np.allclose(full.data, half.data)

    def test_parse_tokens(self):
        spec = PreprocessSpec.parse("l2,pt,center,pca=3")
        assert spec.steps == (
            L2Normalize(),
            PowerTransformCenter(beta=0.5),
            PowerTransformCenter(beta=1.0),
            PCA(target_dim=3),
        )
        with pytest.raises(ValueError, match="zscore"):
            PreprocessSpec.parse("zscore")


class TestBlobs:
    def test_tiny_sigma_nearest_centroid_is_perfect(self):
        spec = BlobSpec(
            class_count=2,
            dim=2,
            per_class_mean_scale=1.0,
            noise_sigma=1e-6,
            examples_per_class=5,
            seed=7,
        )
        fs = generate_blobs(spec)
        assert fs.n_examples == 10
        means = blob_class_means(spec)
        predicted = np.argmin(
            np.linalg.norm(fs.data[:, None] - means[None, :], axis=2), axis=1
        )
        assert (predicted == fs.labels).all()

    def test_seed_determinism(self):
        spec = BlobSpec(2, 2, 1.0, 1e-6, 5, seed=7)
        a, b = generate_blobs(spec), generate_blobs(spec)
        assert (a.data == b.data).all()
        assert (a.labels == b.labels).all()

    def test_accuracy_matches_gaussian_overlap_oracle(self):
        # Independent oracle: with orthogonal equidistant class means at
        # scale s and isotropic noise sigma, the accuracy of classifying by
        # nearest class mean is E_t[Phi(t + s/sigma)^(N-1)], t ~ N(0,1).
        n_way, sigma = 5, 0.487
        ratio = 1.0 / sigma

        def integrand(t):
            return stats.norm.pdf(t) * stats.norm.cdf(t + ratio) ** (n_way - 1)

        bayes_acc, _ = integrate.quad(integrand, -12, 12, limit=200)
        assert abs(bayes_acc - 0.80) < 0.01  # sigma tuned for ~20% Bayes error

        spec = BlobSpec(
            class_count=n_way,
            dim=16,
            per_class_mean_scale=1.0,
            noise_sigma=sigma,
            examples_per_class=2000,
            seed=123,
        )
        fs = generate_blobs(spec)
        means = blob_class_means(spec)
        predicted = np.argmin(
            np.linalg.norm(fs.data[:, None] - means[None, :], axis=2), axis=1
        )
        acc = float((predicted == fs.labels).mean())
        assert abs(acc - bayes_acc) < 0.05


class TestFileFormats:
    def test_csv_two_rows_with_labels(self, tmp_path):
        path = tmp_path / "two.csv"
        path.write_text("0.0,1.0,0\n1.0,0.0,1\n")
        fs = load_features(path, format="csv")
        assert fs.n_examples == 2 and fs.dim == 2
        np.testing.assert_array_equal(fs.labels, [0, 1])

    def test_csv_empty_file_is_malformed_header(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(FormatError, match="malformed header"):
            load_features(path, format="csv")

    def test_csv_header_wins_over_inference(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("#d=3,labeled=0\n1,2,3\n4,5,6\n")
        fs = load_features(path, format="csv")
        assert fs.dim == 3 and fs.labels is None

    def test_csv_roundtrip(self, tmp_path):
        fs = generate_blobs(BlobSpec(3, 4, 1.0, 0.5, 6, seed=2))
        path = tmp_path / "rt.csv"
        save_features(fs, path, format="csv")
        back = load_features(path, format="csv")
        np.testing.assert_allclose(back.data, fs.data)
        np.testing.assert_array_equal(back.labels, fs.labels)

    def test_csv_nonfinite_names_position(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1.0,2.0\n3.0,nan\n")
        with pytest.raises(FormatError, match="row 1, column 1"):
            load_features(path, format="csv")

    def test_npy_roundtrip_shape_600x640(self, tmp_path):
        rng = np.random.default_rng(0)
        data = rng.normal(size=(600, 640)).astype(np.float64)
        fs = FeatureSet(data=data)
        path = tmp_path / "feats.npy"
        save_features(fs, path, format="npy")
        back = load_features(path, format="npy")
        assert back.data.shape == (600, 640)
        assert back.labels is None
        np.testing.assert_array_equal(back.data, data)

    def test_npy_labels_sibling(self, tmp_path):
        fs = generate_blobs(BlobSpec(3, 8, 1.0, 0.5, 10, seed=4))
        path = tmp_path / "feats.npy"
        save_features(fs, path, format="npy")
        assert (tmp_path / "feats.labels.npy").exists()
        back = load_features(path, format="npy")
        np.testing.assert_array_equal(back.labels, fs.labels)

    def test_raw_roundtrip_lossless(self, tmp_path):
        # float32-representable values survive the raw container exactly
        rng = np.random.default_rng(1)
        data = rng.normal(size=(20, 5)).astype(np.float32).astype(np.float64)
        fs = FeatureSet(data=data, labels=np.arange(20) % 3, class_count=3)
        path = tmp_path / "feats.raw"
        save_features(fs, path, format="raw_f32")
        back = load_features(path, format="raw_f32")
        np.testing.assert_array_equal(back.data, data)
        np.testing.assert_array_equal(back.labels, fs.labels)

    def test_raw_bad_magic(self, tmp_path):
        path = tmp_path / "bad.raw"
        path.write_bytes(b"NOPE" + b"\x00" * 12)
        with pytest.raises(FormatError, match="malformed header"):
            load_features(path, format="raw_f32")

    def test_raw_truncated(self, tmp_path):
        fs = FeatureSet(data=np.ones((4, 3)))
        path = tmp_path / "t.raw"
        save_features(fs, path, format="raw_f32")
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError, match="bytes"):
            load_features(path, format="raw_f32")

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError, match="unknown format"):
            load_features(tmp_path / "x", format="parquet")

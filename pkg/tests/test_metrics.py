import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from scgan.data import SyntheticTask, encode_png, generate_synthetic, load_folder, oracle_translate
from scgan.errors import ConfigError, DimensionError
from scgan.metrics import (
    DistributionStats,
    FeatureExtractor,
    MetricReport,
    evaluate_dirs,
    extract_features,
    frechet_distance,
    kid,
    mmd2_unbiased,
)


def stats(mean, cov, n=10):
    return DistributionStats(np.asarray(mean, float), np.asarray(cov, float), n)


def brute_force_mmd2(x, y):
    """Double loop over pairs, no vectorization."""
    d = len(x[0])

    def k(a, b):
        return (sum(ai * bi for ai, bi in zip(a, b)) / d + 1.0) ** 3

    m, n = len(x), len(y)
    sxx = sum(k(x[i], x[j]) for i in range(m) for j in range(m) if i != j) / (m * (m - 1))
    syy = sum(k(y[i], y[j]) for i in range(n) for j in range(n) if i != j) / (n * (n - 1))
    sxy = sum(k(x[i], y[j]) for i in range(m) for j in range(n)) / (m * n)
    return sxx + syy - 2 * sxy


def random_spd(rng, d):
    a = rng.normal(size=(d, d))
    return a @ a.T / d + 0.1 * np.eye(d)


class TestFrechet:
    def test_identical(self):
        s = stats([1.0, 2.0], [[2.0, 0.5], [0.5, 1.0]])
        assert frechet_distance(s, s) == pytest.approx(0.0, abs=1e-10)

    def test_scalar_closed_form(self):
        assert frechet_distance(stats([0.0], [[1.0]]), stats([1.0], [[4.0]])) == pytest.approx(2.0, abs=1e-6)

    def test_diagonal_closed_form(self):
        a = stats([0.0, 0.0], np.diag([1.0, 4.0]))
        b = stats([0.0, 0.0], np.diag([9.0, 1.0]))
        assert frechet_distance(a, b) == pytest.approx(5.0, abs=1e-6)

    def test_non_symmetric_rejected(self):
        a = stats([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(ValueError, match="symmetric"):
            frechet_distance(a, stats([0.0, 0.0], np.eye(2)))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            frechet_distance(stats([0.0], [[1.0]]), stats([0.0, 0.0], np.eye(2)))

    def test_singular_covariances(self):
        # rank-deficient covariances: the clamped square roots stay finite and non-negative
        a = stats([0.0, 0.0, 0.0], np.diag([1.0, 0.0, 0.0]))
        b = stats([0.0, 0.0, 0.0], np.diag([0.0, 1.0, 0.0]))
        assert frechet_distance(a, b) == pytest.approx(2.0, abs=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), d=st.integers(1, 12))
    def test_symmetric_in_arguments(self, seed, d):
        rng = np.random.default_rng(seed)
        a = stats(rng.normal(size=d), random_spd(rng, d))
        b = stats(rng.normal(size=d), random_spd(rng, d))
        assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-8)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), d=st.integers(1, 12), shift=st.floats(0.01, 5))
    def test_zero_iff_equal(self, seed, d, shift):
        rng = np.random.default_rng(seed)
        mu, cov = rng.normal(size=d), random_spd(rng, d)
        assert frechet_distance(stats(mu, cov), stats(mu, cov)) < 1e-8
        moved = mu.copy()
        moved[0] += shift
        assert frechet_distance(stats(mu, cov), stats(moved, cov)) == pytest.approx(shift**2, rel=1e-6)
        assert frechet_distance(stats(mu, cov), stats(mu, cov + shift * np.eye(d))) > 1e-6

    def test_stats_use_unbiased_covariance(self):
        f = np.array([[0.0], [2.0]])
        s = DistributionStats.from_features(f)
        assert s.cov[0, 0] == 2.0 and s.n == 2
        with pytest.raises(ValueError):
            DistributionStats.from_features(f[:1])


class TestKid:
    def test_repeated_point(self):
        c = np.array([[0.3, -1.2], [0.3, -1.2]])
        assert mmd2_unbiased(c, c) == 0.0

    def test_hand_computed(self):
        assert mmd2_unbiased(np.zeros((2, 1)), np.ones((2, 1))) == 7.0
        mean, std = kid(np.zeros((2, 1)), np.ones((2, 1)), subset_size=100, n_subsets=3)
        assert mean == 7.0 and std == 0.0

    @pytest.mark.parametrize("seed,m,n,d", [(0, 20, 20, 3), (1, 7, 13, 5), (2, 20, 11, 1)])
    def test_matches_brute_force(self, seed, m, n, d):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=(m, d)), rng.normal(0.3, 1.2, size=(n, d))
        assert mmd2_unbiased(x, y) == pytest.approx(brute_force_mmd2(x.tolist(), y.tolist()), abs=1e-10)

    def test_same_distribution(self):
        rng = np.random.default_rng(5)
        x, y = rng.normal(size=(500, 16)), rng.normal(size=(500, 16))
        mean, std = kid(x, y)
        assert abs(mean) < 3 * std

    def test_different_distributions(self):
        rng = np.random.default_rng(6)
        mean, std = kid(rng.normal(size=(300, 8)), rng.normal(1.0, 1.0, size=(300, 8)))
        assert mean > 3 * std > 0

    def test_deterministic_and_seeded(self):
        rng = np.random.default_rng(7)
        x, y = rng.normal(size=(300, 4)), rng.normal(size=(300, 4))
        assert kid(x, y, seed=3) == kid(x, y, seed=3)
        assert kid(x, y, seed=3) != kid(x, y, seed=4)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            kid(np.zeros((1, 2)), np.zeros((5, 2)))


class TestExtractors:
    def test_random_conv_dim_and_determinism(self, rand_images):
        x = rand_images(4, 64)
        ext = FeatureExtractor("random-conv", 2021)
        a, b = extract_features(ext, x), extract_features(ext, x)
        assert a.shape == (4, 256) == (4, ext.dim)
        assert a.dtype == np.float64
        assert np.array_equal(a, b)
        assert not np.array_equal(a, extract_features(FeatureExtractor("random-conv", 2022), x))

    def test_rows_follow_input_order(self, rand_images):
        x = rand_images(5, 32)
        ext = FeatureExtractor("random-conv")
        assert np.array_equal(extract_features(ext, x.flip(0)), extract_features(ext, x)[::-1])
        assert np.allclose(extract_features(ext, x, batch_size=2), extract_features(ext, x), atol=1e-6)

    def test_flatten_identity_at_8px(self, rand_images):
        x = rand_images(3, 8)
        f = extract_features(FeatureExtractor("flatten-downsample"), x)
        assert f.shape == (3, 192)
        assert np.array_equal(f, x.flatten(1).double().numpy())

    def test_flatten_downsamples(self, rand_images):
        assert extract_features(FeatureExtractor("flatten-downsample"), rand_images(2, 64)).shape == (2, 192)

    @pytest.mark.filterwarnings("ignore::DeprecationWarning")
    def test_external_file(self, tmp_path, rand_images):
        module = torch.jit.script(torch.nn.Sequential(torch.nn.AdaptiveAvgPool2d(2), torch.nn.Flatten()))
        module.save(str(tmp_path / "ext.pt"))
        ext = FeatureExtractor("external-file", path=str(tmp_path / "ext.pt"))
        x = rand_images(3, 16)
        f = extract_features(ext, x)
        assert f.shape == (3, 12)
        assert np.allclose(f, torch.nn.functional.adaptive_avg_pool2d(x, 2).flatten(1).numpy(), atol=1e-6)

    def test_bad_extractor(self):
        with pytest.raises(ConfigError):
            FeatureExtractor("inception")
        with pytest.raises(ConfigError):
            FeatureExtractor("external-file")

    def test_single_image_rejected(self, rand_images):
        with pytest.raises(ValueError):
            extract_features(FeatureExtractor("flatten-downsample"), rand_images(1, 8))


@pytest.fixture(scope="module")
def synth_test_set(tmp_path_factory):
    root = tmp_path_factory.mktemp("metric_data")
    generate_synthetic(SyntheticTask("channel-swap", n_train=1, n_test=60, size=64, seed=21), root, overwrite=True)
    oracle = root / "oracleB"
    oracle.mkdir()
    a = load_folder(root / "testA", 64)
    for i, img in enumerate(oracle_translate("channel-swap", a)):
        encode_png(img, oracle / f"{i:05d}.png")
    return root


class TestEvaluateDirs:
    def test_self_comparison(self, synth_test_set):
        r = evaluate_dirs(synth_test_set / "testB", synth_test_set / "testB", subset_size=30, n_subsets=10)
        assert r.fid < 1e-6
        assert abs(r.kid_mean) <= 3 * r.kid_std + 1e-12

    def test_oracle_gap(self, synth_test_set):
        ext = FeatureExtractor("random-conv", 2021)
        oracle = evaluate_dirs(synth_test_set / "testB", synth_test_set / "oracleB", ext)
        domains = evaluate_dirs(synth_test_set / "testB", synth_test_set / "testA", ext)
        assert oracle.fid < domains.fid
        assert oracle.kid_mean < domains.kid_mean

    def test_provenance_recorded(self, synth_test_set):
        ext = FeatureExtractor("flatten-downsample", seed=99)
        r = evaluate_dirs(synth_test_set / "testA", synth_test_set / "testB", ext, subset_size=17, n_subsets=4, seed=5)
        d = r.as_dict()
        assert (d["extractor"], d["extractor_seed"], d["kid_subset_size"], d["kid_n_subsets"], d["kid_seed"]) == \
            ("flatten-downsample", 99, 17, 4, 5)
        assert (d["n_real"], d["n_fake"]) == (60, 60)
        assert d["kid_mean_x100"] == pytest.approx(100 * d["kid_mean"])
        assert set(d) == {f for f in MetricReport.__dataclass_fields__}
        json.dumps(d)

    def test_deterministic(self, synth_test_set):
        runs = [evaluate_dirs(synth_test_set / "testA", synth_test_set / "testB").as_dict() for _ in range(2)]
        for r in runs:
            r.pop("timestamp")
        assert runs[0] == runs[1]

    def test_missing_or_empty_dir(self, tmp_path, synth_test_set):
        with pytest.raises(FileNotFoundError):
            evaluate_dirs(tmp_path / "nope", synth_test_set / "testA")
        (tmp_path / "empty").mkdir()
        with pytest.raises(FileNotFoundError):
            evaluate_dirs(synth_test_set / "testA", tmp_path / "empty")


def test_brute_force_reference_agrees_with_kernel_sums():
    # sanity of the reference itself on the hand case
    assert brute_force_mmd2([[0.0], [0.0]], [[1.0], [1.0]]) == 7.0

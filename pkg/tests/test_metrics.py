import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from scipy.stats import special_ortho_group

from talkface.losses import AUMatrix
from talkface.metrics import (FeatureStats, MetricError, MetricReport, ccc, e_fid, f1_au, frechet_distance, psnr,
                              ssim, sync_confidence)
from talkface.pipeline.synth import make_clip
from talkface.predictors import SyntheticSyncScorer, au_detector, track_sync_score


def brute_ssim(a, b, window=8, c1=1e-4, c2=9e-4):
    vals = []
    for ch in range(a.shape[0]):
        for i in range(a.shape[1] - window + 1):
            for j in range(a.shape[2] - window + 1):
                x = a[ch, i:i + window, j:j + window].ravel()
                y = b[ch, i:i + window, j:j + window].ravel()
                mx, my = x.mean(), y.mean()
                vx, vy = ((x - mx) ** 2).mean(), ((y - my) ** 2).mean()
                cxy = ((x - mx) * (y - my)).mean()
                vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def brute_ccc(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    vx = sum((v - mx) ** 2 for v in x) / n
    vy = sum((v - my) ** 2 for v in y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    return 2 * cov / (vx + vy + (mx - my) ** 2)


class TestPSNR:
    def test_examples(self):
        a = np.full((3, 8, 8), 0.5)
        assert psnr(a, a) == math.inf
        assert psnr(a, a + 0.1) == pytest.approx(20.0)
        assert psnr(np.zeros((3, 4, 4)), np.ones((3, 4, 4))) == 0.0

    def test_symmetric_and_shape_checked(self):
        rng = np.random.default_rng(0)
        a, b = rng.random((3, 8, 8)), rng.random((3, 8, 8))
        assert psnr(a, b) == psnr(b, a)
        with pytest.raises(MetricError):
            psnr(a, b[:, :4])


class TestSSIM:
    def test_identical(self):
        a = np.random.default_rng(0).random((3, 16, 16))
        assert ssim(a, a) == pytest.approx(1.0)

    def test_constant_images_closed_form(self):
        c1 = 0.01 ** 2
        assert ssim(np.zeros((1, 8, 8)), np.ones((1, 8, 8))) == pytest.approx(c1 / (1 + c1), abs=1e-4)
        assert ssim(np.zeros((1, 8, 8)), np.ones((1, 8, 8))) == pytest.approx(c1 / (1 + c1), rel=1e-9)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            a, b = rng.random((3, 12, 11)), rng.random((3, 12, 11))
            assert ssim(a, b) == pytest.approx(brute_ssim(a, b), abs=1e-6)
            assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_gaussian_window_variant(self):
        a = np.random.default_rng(2).random((1, 16, 16))
        assert ssim(a, a, gaussian=True) == pytest.approx(1.0)
        assert ssim(a, 1 - a, gaussian=True) < 0.5

    def test_too_small_rejected(self):
        with pytest.raises(MetricError):
            ssim(np.zeros((1, 6, 6)), np.zeros((1, 6, 6)))


class TestCCC:
    def test_examples(self):
        assert ccc([0.1, 0.5, 0.9], [0.1, 0.5, 0.9]) == pytest.approx(1.0)
        assert ccc([0.1, 0.5, 0.9], [0.3, 0.3, 0.3]) == 0.0
        # population moments: cov = 4/3, var_x = 2/3, var_y = 8/3, mean gap 1
        assert ccc([0, 1, 2], [0, 2, 4]) == pytest.approx((8 / 3) / (2 / 3 + 8 / 3 + 1))
        assert ccc([0, 1, 2], [0, 2, 4]) == pytest.approx(brute_ccc([0, 1, 2], [0, 2, 4]))

    def test_too_short_rejected(self):
        with pytest.raises(MetricError):
            ccc([1.0], [1.0])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=2, max_size=20),
           st.floats(0.01, 2.0))
    def test_bounds_oracle_and_shift_penalty(self, pairs, c):
        x = [p[0] for p in pairs]
        y = [p[1] for p in pairs]
        if np.var(x) < 1e-6 or np.var(y) < 1e-6:
            return
        v = ccc(x, y)
        assert -1 - 1e-12 <= v <= 1 + 1e-12
        assert v == pytest.approx(brute_ccc(x, y), abs=1e-6)
        assert ccc(x, [xi + c for xi in x]) < 1.0


class TestF1:
    def test_examples(self):
        gt = np.array([[1, 0, 1], [0, 1, 0]], dtype=float)
        assert f1_au(gt, gt) == 1.0
        assert f1_au(np.zeros_like(gt), gt) == 0.0
        pred = np.array([[1, 1, 1], [0, 0, 0]], dtype=float)  # TP=2, FP=1, FN=1
        assert f1_au(pred, gt) == pytest.approx(2 / 3, abs=1e-4)

    def test_no_positives_convention(self):
        z = np.zeros((2, 2))
        assert f1_au(z, z) == 0.0

    def test_accepts_au_matrices_and_threshold(self):
        ids = ("AU01", "AU02")
        p = AUMatrix(np.array([[0.6, 0.2]]), ids)
        g = AUMatrix(np.array([[0.9, 0.45]]), ids)
        assert f1_au(p, g) == 1.0
        assert f1_au(p, g, threshold=0.4) == pytest.approx(2 / 3)

    def test_column_permutation_invariant(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p, g = rng.random((5, 6)), rng.random((5, 6))
            perm = rng.permutation(6)
            assert f1_au(p, g) == f1_au(p[:, perm], g[:, perm])

    def test_shape_mismatch_rejected(self):
        with pytest.raises(MetricError):
            f1_au(np.zeros((2, 3)), np.zeros((3, 2)))


def stats(mean, cov, n=100):
    return FeatureStats(np.asarray(mean, float), np.asarray(cov, float), n)


class TestFrechet:
    def test_identical(self):
        feats = np.random.default_rng(0).normal(size=(50, 4))
        s = FeatureStats.from_features(feats)
        assert frechet_distance(s, s) == pytest.approx(0.0, abs=1e-8)

    def test_unit_mean_shift(self):
        assert frechet_distance(stats([0, 0, 0], np.eye(3)), stats([1, 0, 0], np.eye(3))) == pytest.approx(1.0, abs=1e-4)

    def test_diagonal_example(self):
        d = frechet_distance(stats([0, 0], np.diag([1.0, 4.0])), stats([0, 0], np.eye(2)))
        assert d == pytest.approx(1.0, abs=1e-4)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(MetricError):
            frechet_distance(stats([0, 0], np.eye(2)), stats([0], np.eye(1)))

    def test_rotation_invariant_and_nonnegative(self):
        rng = np.random.default_rng(3)
        for seed in range(10):
            a = FeatureStats.from_features(rng.normal(size=(40, 5)) @ rng.normal(size=(5, 5)))
            b = FeatureStats.from_features(rng.normal(size=(40, 5)) + 0.3)
            q = special_ortho_group.rvs(5, random_state=seed)
            ra = FeatureStats(q @ a.mean, q @ a.covariance @ q.T, a.n_samples)
            rb = FeatureStats(q @ b.mean, q @ b.covariance @ q.T, b.n_samples)
            d = frechet_distance(a, b)
            assert d >= 0
            assert frechet_distance(ra, rb) == pytest.approx(d, abs=1e-6)

    def test_matches_scipy_sqrtm(self):
        from scipy.linalg import sqrtm
        rng = np.random.default_rng(4)
        a = FeatureStats.from_features(rng.normal(size=(30, 4)))
        b = FeatureStats.from_features(rng.normal(size=(30, 4)) * 2)
        c1, c2 = a.covariance + 1e-6 * np.eye(4), b.covariance + 1e-6 * np.eye(4)
        ref = np.sum((a.mean - b.mean) ** 2) + np.trace(c1 + c2 - 2 * sqrtm(c1 @ c2).real)
        assert frechet_distance(a, b) == pytest.approx(ref, abs=1e-6)

    def test_stats_invariants(self):
        s = FeatureStats.from_features(np.random.default_rng(5).normal(size=(20, 6)))
        assert np.abs(s.covariance - s.covariance.T).max() <= 1e-8
        assert np.linalg.eigvalsh(s.covariance).min() >= -1e-8

    def test_merge_equals_single_pass(self):
        x = np.random.default_rng(6).normal(size=(37, 3))
        merged = FeatureStats.from_features(x[:10]).merge(FeatureStats.from_features(x[10:]))
        full = FeatureStats.from_features(x)
        assert merged.n_samples == 37
        np.testing.assert_allclose(merged.mean, full.mean, atol=1e-12)
        np.testing.assert_allclose(merged.covariance, full.covariance, atol=1e-12)


class TestEFID:
    def extractor(self, video):
        return au_detector(torch.as_tensor(video)).values.numpy()

    def videos(self):
        return [make_clip(s, duration_s=1.0).frames for s in range(3)]

    def test_identical_sets(self):
        v = self.videos()
        assert e_fid(v, v, self.extractor) == pytest.approx(0.0, abs=1e-6)

    def test_constant_shift(self):
        rng = np.random.default_rng(0)
        base = [rng.normal(size=(10, 4)) for _ in range(3)]
        c = 0.7
        shifted = [b + c for b in base]
        assert e_fid(shifted, base, lambda v: v) == pytest.approx(4 * c * c, abs=1e-6)

    def test_stats_match_moment_oracle(self):
        v = self.videos()
        feats = np.concatenate([self.extractor(x) for x in v]).astype(np.float64)
        s = FeatureStats.from_features(feats)
        n, d = feats.shape
        mean = [sum(feats[i, j] for i in range(n)) / n for j in range(d)]
        cov = [[sum((feats[i, a] - mean[a]) * (feats[i, b] - mean[b]) for i in range(n)) / n
                for b in range(d)] for a in range(d)]
        np.testing.assert_allclose(s.mean, mean, atol=1e-7)
        np.testing.assert_allclose(s.covariance, cov, atol=1e-7)

    def test_empty_rejected(self):
        with pytest.raises(MetricError):
            e_fid([], self.videos(), self.extractor)


def smooth_track(n, seed):
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    return 0.5 + 0.2 * np.sin(2 * np.pi * t / 17 + rng.uniform(0, 6)) + 0.15 * np.sin(2 * np.pi * t / 29)


class TestSyncConfidence:
    def test_identical_tracks_score_ten(self):
        env = smooth_track(75, 0)
        assert track_sync_score(env, env) == pytest.approx(10.0)

    def test_uncorrelated_noise_scores_low(self):
        env = smooth_track(250, 1)
        for seed in range(20):
            noise = np.random.default_rng(100 + seed).random(250)
            assert track_sync_score(env, noise) < 2.0

    def test_shift_reduces_zero_lag_score(self):
        env = smooth_track(120, 2)
        scores = [track_sync_score(env[3:-3], np.roll(env, k)[3:-3], max_lag=0) for k in range(4)]
        assert scores[0] == pytest.approx(10.0)
        assert scores[0] > scores[1] > scores[2] > scores[3]

    def test_scorer_on_synthetic_clip(self):
        clip = make_clip(0, duration_s=3.0)
        scorer = SyntheticSyncScorer()
        good = sync_confidence(clip.frames, clip.audio, scorer)
        frozen = np.repeat(clip.frames[:1], clip.frames.shape[0], axis=0)
        assert good > 9.0
        assert sync_confidence(frozen, clip.audio, scorer) < good

    def test_scorer_failure_propagates(self):
        def broken(video, audio):
            raise RuntimeError("scorer down")
        with pytest.raises(RuntimeError, match="scorer down"):
            sync_confidence(None, None, broken)


class TestReport:
    def test_json_and_table(self, tmp_path):
        rep = MetricReport({"PSNR": math.inf, "SSIM": 0.9}, {"clips": ["a"], "scorer": "synthetic-sync-v1"})
        data = json.loads(rep.write(tmp_path / "m.json").read_text())
        assert data["metrics"] == {"PSNR": "inf", "SSIM": 0.9}
        assert data["provenance"]["scorer"] == "synthetic-sync-v1"
        assert rep.table().splitlines()[0].split("|")[0].strip() == "PSNR"

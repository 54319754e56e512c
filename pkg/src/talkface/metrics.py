"""Evaluation metrics: PSNR, SSIM, CCC, micro F1 over AUs, Frechet distance
(FID / E-FID style) and sync confidence through a pluggable scorer."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .losses import AUMatrix

PSNR_IDENTICAL = float("inf")
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
COV_SHRINKAGE = 1e-6


class MetricError(ValueError):
    pass


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")


def psnr(a, b, data_range: float = 1.0) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_IDENTICAL
    return float(10.0 * np.log10(data_range ** 2 / mse))


def ssim(a, b, window: int = 8, c1: float = SSIM_C1, c2: float = SSIM_C2, gaussian: bool = False) -> float:
    """Mean SSIM over all valid window positions and channels of [C, H, W] (or [H, W])
    images. Uniform ``window`` x ``window`` averaging by default; ``gaussian=True``
    switches to the 11x11, sigma 1.5 reference window."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if gaussian:
        window = 11
        g = np.exp(-0.5 * ((np.arange(11) - 5) / 1.5) ** 2)
        kernel = np.outer(g, g) / np.outer(g, g).sum()
    else:
        kernel = np.full((window, window), 1.0 / window ** 2)
    if a.shape[-1] < window or a.shape[-2] < window:
        raise MetricError(f"image {a.shape[-2:]} is smaller than the {window}x{window} window")

    def filt(x):
        return np.einsum("...ijkl,kl->...ij", sliding_window_view(x, (window, window), axis=(-2, -1)), kernel)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ccc(x, y) -> float:
    """Concordance correlation coefficient with population moments. Two
    identical constant sequences count as perfect agreement (1.0)."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise MetricError(f"ccc needs two equal-length 1-D sequences, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise MetricError("ccc needs at least two values")
    mx, my = x.mean(), y.mean()
    cov = np.mean((x - mx) * (y - my))
    den = x.var() + y.var() + (mx - my) ** 2
    if den == 0:
        return 1.0
    return float(2 * cov / den)


def f1_au(pred, gt, threshold: float = 0.5) -> float:
    """Micro-averaged F1 over all binarized (frame, AU) cells; 0 when neither
    side has a positive."""
    p = np.asarray(pred.values if isinstance(pred, AUMatrix) else pred, dtype=np.float64)
    g = np.asarray(gt.values if isinstance(gt, AUMatrix) else gt, dtype=np.float64)
    _same_shape(p, g)
    pb, gb = p >= threshold, g >= threshold
    tp = np.count_nonzero(pb & gb)
    fp = np.count_nonzero(pb & ~gb)
    fn = np.count_nonzero(~pb & gb)
    if tp == 0:
        return 0.0
    return float(2 * tp / (2 * tp + fp + fn))


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    covariance: np.ndarray
    n_samples: int

    @classmethod
    def from_features(cls, feats) -> "FeatureStats":
        x = np.asarray(feats, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise MetricError(f"features must be [N >= 1, D], got {x.shape}")
        mu = x.mean(axis=0)
        d = x - mu
        return cls(mu, d.T @ d / x.shape[0], x.shape[0])

    def merge(self, other: "FeatureStats") -> "FeatureStats":
        """Combine statistics of two disjoint sample sets (population convention)."""
        n1, n2 = self.n_samples, other.n_samples
        n = n1 + n2
        delta = other.mean - self.mean
        mean = self.mean + delta * (n2 / n)
        cov = (n1 * self.covariance + n2 * other.covariance) / n + np.outer(delta, delta) * (n1 * n2 / n ** 2)
        return FeatureStats(mean, cov, n)


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    m = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(m)
    w = np.where(w < 0, 0.0, w)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(s1: FeatureStats, s2: FeatureStats, shrinkage: float = COV_SHRINKAGE) -> float:
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), with the cross term taken as
    Tr((S1^(1/2) S2 S1^(1/2))^(1/2)) so only symmetric square roots are needed."""
    if s1.mean.shape != s2.mean.shape:
        raise MetricError(f"feature dimension mismatch: {s1.mean.shape} vs {s2.mean.shape}")
    eye = np.eye(s1.mean.shape[0])
    c1 = s1.covariance + shrinkage * eye
    c2 = s2.covariance + shrinkage * eye
    r1 = _sqrtm_psd(c1)
    cross = np.trace(_sqrtm_psd(r1 @ c2 @ r1))
    diff = s1.mean - s2.mean
    return float(max(0.0, diff @ diff + np.trace(c1) + np.trace(c2) - 2.0 * cross))


def e_fid(pred_videos, gt_videos, expression_extractor: Callable[[np.ndarray], np.ndarray]) -> float:
    """Frechet distance between per-frame expression-parameter statistics."""
    if len(pred_videos) == 0 or len(gt_videos) == 0:
        raise MetricError("E-FID needs non-empty video sets")
    p = np.concatenate([np.asarray(expression_extractor(v), dtype=np.float64) for v in pred_videos])
    g = np.concatenate([np.asarray(expression_extractor(v), dtype=np.float64) for v in gt_videos])
    return frechet_distance(FeatureStats.from_features(p), FeatureStats.from_features(g))


def sync_confidence(video, audio, scorer) -> float:
    return float(scorer(video, audio))


@dataclass
class MetricReport:
    values: dict
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"metrics": {k: _jsonable(v) for k, v in self.values.items()}, "provenance": self.provenance}

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")
        return path

    def table(self) -> str:
        cols = ["PSNR", "SSIM", "FID", "E-FID", "F1", "Sync", "CCC_V", "CCC_A"]
        present = [c for c in cols if c in self.values]
        head = " | ".join(f"{c:>8}" for c in present)
        row = " | ".join(f"{self.values[c]:>8.4f}" for c in present)
        return head + "\n" + row


def _jsonable(v):
    v = float(v)
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v

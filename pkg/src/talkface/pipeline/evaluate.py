"""Evaluation of generated clips against aligned ground truth.

A video directory holds ``frames/*.png`` and ``audio.wav`` (and, for
generated videos, ``meta.json``). ``evaluate_dirs`` accepts either a single
video directory on each side or two directories of same-named video
subdirectories.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from ..audio import AudioClip, read_wav
from ..metrics import FeatureStats, MetricError, MetricReport, ccc, e_fid, f1_au, frechet_distance, psnr, ssim
from ..predictors import PredictorSuite, SyntheticSyncScorer, synthetic_predictors
from .synth import read_png_frames

FEATURE_POOL = 8  # frame features are channel means over POOL x POOL cells


@dataclass
class ClipPair:
    name: str
    generated: np.ndarray  # [N, 3, H, W]
    ground_truth: np.ndarray  # [N, 3, H, W]
    audio: AudioClip

    def __post_init__(self):
        g, t = np.shape(self.generated), np.shape(self.ground_truth)
        if g != t:
            raise MetricError(f"{self.name}: generated {g} and ground truth {t} are not aligned")


def frame_features(frames: np.ndarray) -> np.ndarray:
    """Per-frame appearance features: average-pooled colour cells, [N, 3 * cells]."""
    x = np.asarray(frames, dtype=np.float64)
    n, c, h, w = x.shape
    p = FEATURE_POOL
    pooled = x.reshape(n, c, p, h // p, p, w // p).mean(axis=(3, 5))
    return pooled.reshape(n, -1)


def au_features(frames: np.ndarray, suite: PredictorSuite | None = None) -> np.ndarray:
    suite = suite or synthetic_predictors()
    return suite.au_detector(torch.as_tensor(np.asarray(frames, dtype=np.float64))).values.numpy()


def evaluate(pairs: Sequence[ClipPair], suite: PredictorSuite | None = None, scorer=None,
             provenance: dict | None = None) -> MetricReport:
    if not pairs:
        raise MetricError("nothing to evaluate")
    suite = suite or synthetic_predictors()
    scorer = scorer or SyntheticSyncScorer()

    def t64(x):
        return torch.as_tensor(np.asarray(x, dtype=np.float64))

    psnrs, ssims, syncs = [], [], []
    va_pred, va_gt, au_pred, au_gt = [], [], [], []
    for p in pairs:
        psnrs.append(psnr(p.generated, p.ground_truth))
        ssims.extend(ssim(a, b) for a, b in zip(p.generated, p.ground_truth))
        syncs.append(scorer(p.generated, p.audio))
        va_pred.append(suite.video_va_predictor(t64(p.generated)).numpy())
        va_gt.append(suite.video_va_predictor(t64(p.ground_truth)).numpy())
        au_pred.append(suite.au_detector(t64(p.generated)).values.numpy())
        au_gt.append(suite.au_detector(t64(p.ground_truth)).values.numpy())
    va_pred, va_gt = np.concatenate(va_pred), np.concatenate(va_gt)
    fid = frechet_distance(FeatureStats.from_features(np.concatenate([frame_features(p.generated) for p in pairs])),
                           FeatureStats.from_features(np.concatenate([frame_features(p.ground_truth) for p in pairs])))
    values = {
        "PSNR": float(np.mean(psnrs)),
        "SSIM": float(np.mean(ssims)),
        "FID": fid,
        "E-FID": e_fid([p.generated for p in pairs], [p.ground_truth for p in pairs],
                       lambda v: au_features(v, suite)),
        "F1": f1_au(np.concatenate(au_pred), np.concatenate(au_gt)),
        "Sync": float(np.mean(syncs)),
        "CCC_V": ccc(va_pred[:, 0], va_gt[:, 0]),
        "CCC_A": ccc(va_pred[:, 1], va_gt[:, 1]),
    }
    prov = {
        "clips": [p.name for p in pairs],
        "num_frames": int(sum(len(p.generated) for p in pairs)),
        "predictor_suite": suite.version,
        "sync_scorer": getattr(scorer, "version", type(scorer).__name__),
        **(provenance or {}),
    }
    return MetricReport(values, prov)


def _is_video(path: Path) -> bool:
    return (path / "frames").is_dir()


def _video_dirs(root: Path) -> dict[str, Path]:
    if _is_video(root):
        return {root.name: root}
    found = {p.name: p for p in sorted(root.iterdir()) if p.is_dir() and _is_video(p)}
    if not found:
        raise MetricError(f"no video directories under {root}")
    return found


def load_pairs(pred_dir: str | Path, gt_dir: str | Path) -> tuple[list[ClipPair], dict]:
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    preds, gts = _video_dirs(pred_dir), _video_dirs(gt_dir)
    if _is_video(pred_dir) and _is_video(gt_dir):
        names = [(next(iter(preds)), next(iter(gts)))]
    else:
        missing = sorted(set(preds) - set(gts))
        if missing:
            raise MetricError(f"no ground truth for {missing}")
        names = [(n, n) for n in sorted(preds)]
    pairs, hashes = [], set()
    for pn, gn in names:
        meta_path = preds[pn] / "meta.json"
        if meta_path.exists():
            hashes.add(json.loads(meta_path.read_text()).get("config_hash"))
        audio_dir = gts[gn] if (gts[gn] / "audio.wav").exists() else preds[pn]
        pairs.append(ClipPair(gn, read_png_frames(preds[pn] / "frames"), read_png_frames(gts[gn] / "frames"),
                              read_wav(audio_dir / "audio.wav")))
    hashes.discard(None)
    return pairs, {"config_hash": sorted(hashes)[0] if len(hashes) == 1 else sorted(hashes)}


def evaluate_dirs(pred_dir: str | Path, gt_dir: str | Path, report_path: str | Path | None = None) -> MetricReport:
    pairs, prov = load_pairs(pred_dir, gt_dir)
    report = evaluate(pairs, provenance=prov)
    if report_path is not None:
        report.write(report_path)
    return report


__all__ = ["ClipPair", "au_features", "evaluate", "evaluate_dirs", "frame_features", "load_pairs"]

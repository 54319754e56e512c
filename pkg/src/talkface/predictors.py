"""Deterministic, differentiable stand-ins for the perception models used by the
auxiliary losses and the metrics (sync estimator, valence/arousal predictors,
AU detector, caption embedder). All video inputs are torch tensors
[F, 3, H, W] with values in [0, 1]; boxes are defined on a 32x32 canvas and
scaled to the actual resolution."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
from torch import Tensor

from .audio import VIDEO_FPS, AudioClip, frame_envelope
from .emotion import EmotionConfig, VASequence, segment_audio, synthetic_va
from .losses import AUMatrix, CaptionEmbedding, SyncEstimate

# (row0, row1, col0, col1) on the 32x32 canvas
MOUTH_BOX = (17, 28, 9, 23)
FACE_BOX = (5, 27, 7, 25)
CHEEK_BOX = (15, 19, 8, 12)
AU_BOXES = {
    "AU01": (8, 11, 8, 14),
    "AU02": (8, 11, 18, 24),
    "AU05": (11, 15, 9, 14),
    "AU07": (11, 15, 18, 23),
    "AU25": (20, 24, 13, 19),
    "AU26": (23, 27, 12, 20),
}
# darkness levels at which each probe reads 0.5
AU_CENTERS = {"AU01": 0.38, "AU02": 0.38, "AU05": 0.65, "AU07": 0.65, "AU25": 0.70, "AU26": 0.53}
AU_GAIN = 12.0


def _box(frames: Tensor, box) -> Tensor:
    s = frames.shape[-1] / 32.0
    r0, r1, c0, c1 = (int(round(v * s)) for v in box)
    return frames[..., r0:r1, c0:c1]


def darkness(frames: Tensor, box) -> Tensor:
    """1 - mean intensity inside ``box``, per frame."""
    return 1.0 - _box(frames, box).mean(dim=(-3, -2, -1))


def mouth_track(frames: Tensor) -> Tensor:
    return darkness(frames, MOUTH_BOX)


def _zscore(x: Tensor) -> Tensor:
    x = x - x.mean()
    return x / (x.pow(2).mean().sqrt() + 1e-8)


def lagged_correlations(audio_env: Tensor, mouth: Tensor, max_lag: int) -> tuple[Tensor, Tensor]:
    """Pearson correlation of the overlapping parts for lags -max_lag..max_lag.
    A positive lag means the video trails the audio."""
    n = audio_env.shape[0]
    lags = torch.arange(-max_lag, max_lag + 1)
    corrs = []
    for lag in lags.tolist():
        if lag >= 0:
            a, m = audio_env[:n - lag], mouth[lag:]
        else:
            a, m = audio_env[-lag:], mouth[:n + lag]
        corrs.append((_zscore(a) * _zscore(m)).mean())
    return lags, torch.stack(corrs)


def sync_estimate(mouth: Tensor, audio_env: Tensor, fps: int = VIDEO_FPS, max_lag: int = 3,
                  temperature: float = 0.05) -> SyncEstimate:
    """Soft-argmax offset of the envelope/mouth cross-correlation, and the
    misalignment-weighted mean time. Perfectly aligned tracks give offset 0
    and the clip midpoint."""
    n = min(mouth.shape[0], audio_env.shape[0])
    mouth, audio_env = mouth[:n], audio_env[:n].to(mouth.dtype)
    lags, corrs = lagged_correlations(audio_env, mouth, max_lag)
    w = torch.softmax(corrs / temperature, dim=0)
    lag = (w * lags.to(mouth.dtype)).sum()
    mis = (_zscore(audio_env) - _zscore(mouth)).abs()
    times = (torch.arange(n, dtype=mouth.dtype) + 0.5) / fps
    timestamp = (torch.softmax(mis / temperature, dim=0) * times).sum()
    return SyncEstimate(lag.abs() / fps, timestamp)


def track_sync_score(audio_env, mouth, max_lag: int = 3, scale: float = 10.0) -> float:
    """Peak normalized cross-correlation over lags, clipped to [0, 1] and scaled."""
    a = torch.as_tensor(np.asarray(audio_env), dtype=torch.float64)
    m = torch.as_tensor(np.asarray(mouth), dtype=torch.float64)
    n = min(a.shape[0], m.shape[0])
    _, corrs = lagged_correlations(a[:n], m[:n], max_lag)
    return scale * float(corrs.max().clamp(0.0, 1.0))


def au_detector(frames: Tensor) -> AUMatrix:
    cols = [torch.sigmoid(AU_GAIN * (darkness(frames, box) - AU_CENTERS[k])) for k, box in AU_BOXES.items()]
    return AUMatrix(torch.stack(cols, dim=-1), tuple(AU_BOXES))


def caption_embedder(frames: Tensor) -> CaptionEmbedding:
    """Bag of video statistics; the trailing constant keeps the norm positive."""
    mean = frames.mean(dim=(0, 2, 3))
    std = frames.std(dim=(0, 2, 3), unbiased=False)
    motion = (frames[1:] - frames[:-1]).abs().mean() if frames.shape[0] > 1 else frames.new_zeros(())
    mouth = mouth_track(frames)
    face = _box(frames, FACE_BOX).mean(dim=(0, 2, 3))
    parts = [mean, std, face, motion.reshape(1), mouth.mean().reshape(1),
             mouth.std(unbiased=False).reshape(1), frames.new_ones(1)]
    return CaptionEmbedding(torch.cat(parts))


def segment_frame_spans(num_frames: int, fps: int, cfg: EmotionConfig) -> list[tuple[int, int]]:
    """Audio-segmentation spans expressed as [start, stop) video-frame ranges."""
    n = max(1, int(round(num_frames / fps * 16000)))
    dummy = AudioClip(np.zeros(n), 16000)
    spans = []
    for seg in segment_audio(dummy, cfg.window_s, cfg.overlap):
        lo = int(np.floor(seg.start_s * fps + 1e-9))
        hi = max(lo + 1, int(np.ceil(seg.end_s * fps - 1e-9)))
        spans.append((lo, min(hi, num_frames)))
    return spans


def video_va(frames: Tensor, fps: int = VIDEO_FPS, cfg: EmotionConfig = EmotionConfig()) -> Tensor:
    """[K, 2] valence/arousal per audio-aligned segment, read from the face
    tint (valence) and mouth activity (arousal)."""
    out = []
    for lo, hi in segment_frame_spans(frames.shape[0], fps, cfg):
        seg = frames[lo:hi]
        cheek = _box(seg, CHEEK_BOX).mean(dim=(0, 2, 3))
        valence = torch.tanh((cheek[0] - cheek[2] - 0.35) / 0.22)
        arousal = torch.tanh(4.0 * (mouth_track(seg).mean() - 0.45))
        out.append(torch.stack([valence, arousal]))
    return torch.stack(out)


def audio_va(clip: AudioClip, cfg: EmotionConfig = EmotionConfig()) -> VASequence:
    pairs, spans = [], []
    for seg in segment_audio(clip, cfg.window_s, cfg.overlap):
        pairs.append(synthetic_va(seg.clip))
        spans.append((seg.start_s, seg.end_s))
    return VASequence(np.array(pairs), tuple(spans))


@dataclass
class PredictorSuite:
    """Pluggable perception models. ``video_va_predictor`` reads valence/arousal
    from generated frames; with the synthetic audio predictor alone the
    generated and reference audio are identical, so the emo loss would vanish."""

    sync_estimator: Callable[[Tensor, AudioClip], SyncEstimate]
    va_predictor: Callable[[AudioClip], VASequence]
    au_detector: Callable[[Tensor], AUMatrix]
    caption_embedder: Callable[[Tensor], CaptionEmbedding]
    video_va_predictor: Callable[[Tensor], Tensor] | None = None
    version: str = "custom"
    fps: int = field(default=VIDEO_FPS)


def _synthetic_sync(frames: Tensor, clip: AudioClip) -> SyncEstimate:
    env = torch.as_tensor(frame_envelope(clip, frames.shape[0]), dtype=frames.dtype)
    return sync_estimate(mouth_track(frames), env)


def synthetic_predictors(emotion_cfg: EmotionConfig = EmotionConfig()) -> PredictorSuite:
    return PredictorSuite(
        sync_estimator=_synthetic_sync,
        va_predictor=lambda clip: audio_va(clip, emotion_cfg),
        au_detector=au_detector,
        caption_embedder=caption_embedder,
        video_va_predictor=lambda frames: video_va(frames, VIDEO_FPS, emotion_cfg),
        version="synthetic-v1",
    )


class SyntheticSyncScorer:
    """Confidence in [0, 10]: peak envelope/mouth correlation over +-max_lag frames."""

    version = "synthetic-sync-v1"

    def __init__(self, max_lag: int = 3):
        self.max_lag = max_lag

    def __call__(self, frames: Tensor, clip: AudioClip) -> float:
        frames = torch.as_tensor(frames)
        env = frame_envelope(clip, frames.shape[0])
        return track_sync_score(env, mouth_track(frames.double()).numpy(), self.max_lag)

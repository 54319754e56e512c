"""Mono audio container, WAV I/O and the frame-rate arithmetic shared by every module."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 16000
VIDEO_FPS = 25


class AudioError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    name: str = field(default="clip", compare=False)

    def __post_init__(self):
        samples = np.ascontiguousarray(np.asarray(self.samples, dtype=np.float64))
        if samples.ndim != 1:
            raise AudioError(f"audio must be mono, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise AudioError("audio contains non-finite samples")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def num_samples(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate

    def slice(self, start: int, stop: int, name: str | None = None) -> "AudioClip":
        return AudioClip(self.samples[start:stop], self.sample_rate, name or self.name)


def num_video_frames(num_samples: int, sample_rate: int, fps: int = VIDEO_FPS) -> int:
    """ceil(duration * fps) computed exactly in integers."""
    return -(-num_samples * fps // sample_rate)


def frame_sample_bounds(frame: int, sample_rate: int, fps: int = VIDEO_FPS) -> tuple[int, int]:
    return frame * sample_rate // fps, (frame + 1) * sample_rate // fps


def frame_envelope(clip: AudioClip, num_frames: int | None = None, fps: int = VIDEO_FPS) -> np.ndarray:
    """Per-video-frame RMS of the waveform (zero beyond the end of the clip)."""
    if num_frames is None:
        num_frames = num_video_frames(clip.num_samples, clip.sample_rate, fps)
    env = np.zeros(num_frames)
    for f in range(num_frames):
        lo, hi = frame_sample_bounds(f, clip.sample_rate, fps)
        seg = clip.samples[lo:hi]
        if seg.size:
            env[f] = np.sqrt(np.mean(seg * seg))
    return env


def resample_linear(clip: AudioClip, target_rate: int) -> AudioClip:
    if target_rate <= 0:
        raise AudioError(f"target sample rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    n_out = int(round(clip.num_samples * target_rate / clip.sample_rate))
    t_out = np.arange(n_out) / target_rate
    t_in = np.arange(clip.num_samples) / clip.sample_rate
    return AudioClip(np.interp(t_out, t_in, clip.samples), target_rate, clip.name)


def peak_normalize(clip: AudioClip) -> AudioClip:
    peak = np.max(np.abs(clip.samples)) if clip.num_samples else 0.0
    if peak == 0:
        return clip
    return AudioClip(clip.samples / peak, clip.sample_rate, clip.name)


def read_wav(path: str | Path) -> AudioClip:
    """Read a mono WAV file (16-bit PCM or float32)."""
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise AudioError(f"cannot read {path}: {exc}") from exc
    if data.ndim == 2:
        if data.shape[1] != 1:
            raise AudioError(f"{path}: expected mono audio, got {data.shape[1]} channels")
        data = data[:, 0]
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype.kind == "f":
        samples = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported sample format {data.dtype}")
    return AudioClip(samples, int(rate), path.stem)


def write_wav(path: str | Path, clip: AudioClip, pcm16: bool = False) -> None:
    if pcm16:
        data = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype("<i2")
    else:
        data = clip.samples.astype("<f4")
    wavfile.write(Path(path), clip.sample_rate, data)

"""Parametric talking-"face" clips with known ground truth.

A soft ellipse face on a flat background; the mouth height follows the
per-frame RMS of the audio, and the face tint encodes a clip-level valence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..audio import SAMPLE_RATE, VIDEO_FPS, AudioClip, frame_envelope, write_wav

SKIN = np.array([0.85, 0.65, 0.50])
VALENCE_TINT = np.array([0.10, -0.05, -0.12])
MOUTH_COLOR = np.array([0.30, 0.05, 0.10])
EYE_COLOR = np.array([0.10, 0.08, 0.08])


@dataclass
class SyntheticClip:
    name: str
    frames: np.ndarray  # [F, 3, H, W] in [0, 1]
    audio: AudioClip
    caption: str
    valence: float
    fps: int = VIDEO_FPS


def synthetic_audio(rng: np.random.Generator, duration_s: float, sr: int = SAMPLE_RATE) -> AudioClip:
    n = int(round(duration_s * sr))
    t = np.arange(n) / sr
    env = np.full(n, 0.5)
    for _ in range(3):
        env += (0.5 / 3) * np.sin(2 * np.pi * rng.uniform(0.8, 2.5) * t + rng.uniform(0, 2 * np.pi))
    env = np.clip(env, 0.03, 1.0)
    f0 = rng.uniform(110.0, 220.0)
    carrier = np.sin(2 * np.pi * f0 * t) + 0.5 * np.sin(4 * np.pi * f0 * t) + 0.25 * np.sin(6 * np.pi * f0 * t)
    x = env * carrier
    return AudioClip(0.9 * x / np.abs(x).max(), sr)


def _soft_ellipse(xx, yy, cx, cy, rx, ry, softness=0.12):
    d = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
    return 1.0 / (1.0 + np.exp(-(1.0 - d) / softness))


def render_face(aperture: float, background: np.ndarray, valence: float, size: int = 32) -> np.ndarray:
    s = size / 32.0
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    img = np.broadcast_to(background[:, None, None], (3, size, size)).copy()
    layers = [
        (_soft_ellipse(xx, yy, 16 * s, 16 * s, 11 * s, 13 * s), np.clip(SKIN + valence * VALENCE_TINT, 0, 1)),
        (_soft_ellipse(xx, yy, 11.5 * s, 13 * s, 1.8 * s, 1.8 * s, 0.2), EYE_COLOR),
        (_soft_ellipse(xx, yy, 20.5 * s, 13 * s, 1.8 * s, 1.8 * s, 0.2), EYE_COLOR),
        (_soft_ellipse(xx, yy, 16 * s, 22 * s, 5 * s, (0.6 + 3.4 * aperture) * s, 0.15), MOUTH_COLOR),
    ]
    for mask, color in layers:
        img = img * (1 - mask) + color[:, None, None] * mask
    return np.clip(img, 0.0, 1.0)


def make_clip(seed: int, duration_s: float = 3.0, size: int = 32, name: str | None = None) -> SyntheticClip:
    rng = np.random.default_rng(seed)
    audio = synthetic_audio(rng, duration_s)
    background = rng.uniform(0.1, 0.45, size=3)
    valence = float(rng.uniform(-1.0, 1.0))
    env = frame_envelope(audio)
    aperture = env / env.max()
    frames = np.stack([render_face(a, background, valence, size) for a in aperture]).astype(np.float32)
    mood = "smiling" if valence > 0.3 else "frowning" if valence < -0.3 else "neutral"
    caption = f"a {mood} person talking in front of a plain wall"
    return SyntheticClip(name or f"clip{seed:03d}", frames, AudioClip(audio.samples, audio.sample_rate),
                         caption, valence)


def write_png_frames(directory: Path, frames: np.ndarray) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        arr = np.round(np.clip(frame, 0, 1).transpose(1, 2, 0) * 255).astype(np.uint8)
        Image.fromarray(arr, "RGB").save(directory / f"{i:06d}.png", optimize=False)


def read_png_frames(directory: Path) -> np.ndarray:
    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise FileNotFoundError(f"no PNG frames in {directory}")
    frames = [np.asarray(Image.open(p).convert("RGB"), dtype=np.float32) / 255.0 for p in paths]
    return np.stack(frames).transpose(0, 3, 1, 2)


def write_raw_clip(root: Path, clip: SyntheticClip) -> Path:
    """Raw clip layout: frames/*.png, audio.wav, caption.txt, meta.json."""
    out = Path(root) / clip.name
    write_png_frames(out / "frames", clip.frames)
    write_wav(out / "audio.wav", clip.audio, pcm16=True)
    (out / "caption.txt").write_text(clip.caption + "\n")
    meta = {"fps": clip.fps, "landmark_ok": True, "single_speaker": True, "valence": clip.valence}
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return out


def synth_dataset(root: str | Path, n_clips: int = 2, seed: int = 0, duration_s: float = 3.0,
                  size: int = 32) -> list[Path]:
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**31 - 1, size=n_clips)
    return [write_raw_clip(Path(root), make_clip(int(s), duration_s, size, name=f"clip{i:03d}"))
            for i, s in enumerate(seeds)]

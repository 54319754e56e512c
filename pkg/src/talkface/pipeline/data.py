"""Dataset ingestion and standardization, plus training-window sampling.

Raw clip layout (one directory per clip)::

    frames/*.png   video frames in lexical order
    audio.wav      mono audio at any sample rate
    caption.txt    optional caption (a captioner callable may supply it instead)
    meta.json      {"fps": ..., "landmark_ok": ..., "single_speaker": ...}

Ingested records keep the same layout at 25 fps / 16 kHz plus ``record.json``.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from ..audio import SAMPLE_RATE, VIDEO_FPS, AudioClip, AudioError, peak_normalize, read_wav, resample_linear, write_wav
from .synth import read_png_frames, write_png_frames

# reason codes attached to rejected clips
UNREADABLE = "unreadable_media"
ZERO_FRAMES = "zero_frames"
NO_CAPTION = "missing_caption"
LANDMARK = "landmark_filter"
MULTI_SPEAKER = "multi_speaker"
TOO_SHORT = "too_short"
TOO_LONG = "too_long"


class IngestRejected(Exception):
    def __init__(self, name: str, reason: str, detail: str = ""):
        super().__init__(f"{name}: {reason}" + (f" ({detail})" if detail else ""))
        self.name = name
        self.reason = reason
        self.detail = detail


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ClipRecord:
    name: str
    frames_path: str
    audio_path: str
    caption: str
    duration_s: float
    num_frames: int
    fps: int = VIDEO_FPS
    sample_rate: int = SAMPLE_RATE
    landmark_ok: bool = True
    single_speaker: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    def load_frames(self) -> np.ndarray:
        return read_png_frames(Path(self.frames_path))

    def load_audio(self) -> AudioClip:
        clip = read_wav(self.audio_path)
        return AudioClip(clip.samples, clip.sample_rate, self.name)


def nearest_frame_indices(num_frames: int, fps_in: float, fps_out: float = VIDEO_FPS) -> np.ndarray:
    """Source index for every output frame, picking the input frame whose
    centre is closest to the output frame's centre."""
    if num_frames <= 0:
        return np.zeros(0, dtype=np.int64)
    n_out = max(1, int(round(num_frames * fps_out / fps_in)))
    centres = (np.arange(n_out) + 0.5) * fps_in / fps_out - 0.5
    return np.clip(np.floor(centres + 0.5).astype(np.int64), 0, num_frames - 1)


def standardize_frames(frames: np.ndarray, fps_in: float, fps_out: float = VIDEO_FPS) -> np.ndarray:
    if fps_in == fps_out:
        return frames
    return frames[nearest_frame_indices(frames.shape[0], fps_in, fps_out)]


def standardize_audio(clip: AudioClip, sample_rate: int = SAMPLE_RATE) -> AudioClip:
    return peak_normalize(resample_linear(clip, sample_rate))


def ingest_clip(raw_dir: str | Path, out_root: str | Path, fps: int = VIDEO_FPS, sample_rate: int = SAMPLE_RATE,
                min_dur: float = 3.0, max_dur: float = 20.0,
                landmark_filter: Callable[[np.ndarray, dict], bool] | None = None,
                captioner: Callable[[np.ndarray], str] | None = None) -> ClipRecord:
    """Standardize one raw clip and write it under ``out_root``. Raises
    :class:`IngestRejected` with a reason code when a filter fails."""
    raw_dir = Path(raw_dir)
    name = raw_dir.name
    try:
        meta = json.loads((raw_dir / "meta.json").read_text()) if (raw_dir / "meta.json").exists() else {}
        frames = read_png_frames(raw_dir / "frames")
        audio = read_wav(raw_dir / "audio.wav")
    except FileNotFoundError as exc:
        if "no PNG frames" in str(exc):
            raise IngestRejected(name, ZERO_FRAMES, str(exc)) from exc
        raise IngestRejected(name, UNREADABLE, str(exc)) from exc
    except (OSError, ValueError, AudioError) as exc:
        raise IngestRejected(name, UNREADABLE, str(exc)) from exc
    if frames.shape[0] == 0:
        raise IngestRejected(name, ZERO_FRAMES)

    fps_in = float(meta.get("fps", fps))
    landmark_ok = bool(landmark_filter(frames, meta)) if landmark_filter else bool(meta.get("landmark_ok", True))
    single_speaker = bool(meta.get("single_speaker", True))
    if not landmark_ok:
        raise IngestRejected(name, LANDMARK)
    if not single_speaker:
        raise IngestRejected(name, MULTI_SPEAKER)

    frames = standardize_frames(frames, fps_in, fps)
    audio = standardize_audio(audio, sample_rate)
    duration = frames.shape[0] / fps
    if duration < min_dur - 1e-9:
        raise IngestRejected(name, TOO_SHORT, f"{duration:.3f} s < {min_dur} s")
    if duration > max_dur + 1e-9:
        raise IngestRejected(name, TOO_LONG, f"{duration:.3f} s > {max_dur} s")

    if captioner is not None:
        caption = captioner(frames)
    elif (raw_dir / "caption.txt").exists():
        caption = (raw_dir / "caption.txt").read_text().strip()
    else:
        raise IngestRejected(name, NO_CAPTION)

    out = Path(out_root) / name
    write_png_frames(out / "frames", frames)
    write_wav(out / "audio.wav", audio)
    (out / "caption.txt").write_text(caption + "\n")
    record = ClipRecord(name, str(out / "frames"), str(out / "audio.wav"), caption, duration,
                        int(frames.shape[0]), fps, sample_rate, landmark_ok, single_speaker)
    (out / "record.json").write_text(json.dumps(record.to_dict(), sort_keys=True, indent=2) + "\n")
    return record


def ingest_directory(in_root: str | Path, out_root: str | Path, workers: int = 1,
                     **kwargs) -> tuple[list[ClipRecord], list[dict]]:
    """Ingest every clip directory under ``in_root``; writes ``manifest.json``
    listing accepted records and rejections with reason codes. Clips are
    independent, so ``workers > 1`` processes them concurrently; results keep
    the sorted directory order either way."""
    out_root = Path(out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    raws = sorted(p for p in Path(in_root).iterdir() if p.is_dir())

    def one(raw):
        try:
            return ingest_clip(raw, out_root, **kwargs)
        except IngestRejected as exc:
            return exc

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, raws))
    else:
        results = [one(r) for r in raws]
    records = [r for r in results if isinstance(r, ClipRecord)]
    rejected = [{"name": e.name, "reason": e.reason, "detail": e.detail}
                for e in results if isinstance(e, IngestRejected)]
    manifest = {"records": [r.name for r in records], "rejected": rejected}
    (out_root / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return records, rejected


def load_record(directory: str | Path) -> ClipRecord:
    data = json.loads((Path(directory) / "record.json").read_text())
    return ClipRecord(**data)


def load_dataset(data_dir: str | Path) -> list[ClipRecord]:
    data_dir = Path(data_dir)
    records = [load_record(p.parent) for p in sorted(data_dir.glob("*/record.json"))]
    if not records:
        raise DataError(f"no ingested records under {data_dir}")
    return [r for r in records if r.landmark_ok and r.single_speaker]


@dataclass
class TrainingSample:
    ref_index: int
    start: int
    reference: np.ndarray
    target: np.ndarray  # [window, ...]
    motion_context: np.ndarray  # [M, ...], zero rows where the window touches the sequence start
    motion_padded: bool


def sample_training_clip(frames, rng: np.random.Generator, window: int = 14, motion: int = 2,
                         start: int | None = None) -> TrainingSample:
    """Uniform reference frame plus a contiguous target window preceded by
    ``motion`` context frames. Random windows always have a full context;
    an explicit ``start`` below ``motion`` gets a zero-padded, flagged context."""
    n = len(frames)
    if n < window + motion:
        raise DataError(f"clip has {n} frames; need at least {window + motion}")
    ref_index = int(rng.integers(0, n))
    if start is None:
        start = int(rng.integers(motion, n - window + 1))
    elif not 0 <= start <= n - window:
        raise DataError(f"window start {start} outside [0, {n - window}]")
    lo = start - motion
    padded = lo < 0
    context = frames[max(lo, 0):start]
    if padded:
        pad = np.zeros((-lo, *np.shape(frames[0])), dtype=np.asarray(frames[0]).dtype)
        context = np.concatenate([pad, np.asarray(context)]) if len(context) else pad
    return TrainingSample(ref_index, start, frames[ref_index], frames[start:start + window], context, padded)

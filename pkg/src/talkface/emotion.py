"""Multi-modal emotion embedding: transcript sentiment, speech-emotion class
probabilities and a valence/arousal track over overlapping audio segments,
concatenated in that order."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .audio import AudioClip
from .io import config_hash as _hash, save_tensor


class EmotionError(ValueError):
    pass


class ExtractorError(RuntimeError):
    pass


@dataclass(frozen=True)
class EmotionConfig:
    d_text: int = 7
    d_ser: int = 8
    k_fixed: int = 6
    window_s: float = 2.0
    overlap: float = 0.5

    @property
    def dim(self) -> int:
        return self.d_text + self.d_ser + 2 * self.k_fixed

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Segment:
    clip: AudioClip
    start_s: float
    end_s: float


@dataclass(frozen=True)
class VASequence:
    pairs: np.ndarray  # [K, 2] (valence, arousal)
    spans: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.float64).reshape(-1, 2)
        if pairs.shape[0] < 1:
            raise EmotionError("a VA sequence needs at least one segment")
        if len(self.spans) != pairs.shape[0]:
            raise EmotionError(f"{pairs.shape[0]} VA pairs but {len(self.spans)} spans")
        if np.any(np.abs(pairs) > 1.0):
            raise EmotionError("valence/arousal values must lie in [-1, 1]")
        object.__setattr__(self, "pairs", pairs)

    def __len__(self) -> int:
        return self.pairs.shape[0]

    @property
    def valence(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def arousal(self) -> np.ndarray:
        return self.pairs[:, 1]


@dataclass(frozen=True)
class EmotionEmbedding:
    e_text: np.ndarray
    e_ser: np.ndarray
    e_va: np.ndarray

    @property
    def e_full(self) -> np.ndarray:
        return np.concatenate([self.e_text, self.e_ser, self.e_va])

    @property
    def dim(self) -> int:
        return self.e_text.size + self.e_ser.size + self.e_va.size

    def zeros_like(self) -> "EmotionEmbedding":
        return EmotionEmbedding(np.zeros_like(self.e_text), np.zeros_like(self.e_ser), np.zeros_like(self.e_va))


@dataclass
class EmotionExtractorSuite:
    """Bundle of the three extractors.

    ``prefilter`` runs on the clip before any extractor sees it (music removal
    hook, identity by default). ``reentrant`` tells callers whether the suite
    may be invoked from several threads at once.
    """

    text_extractor: Callable[[AudioClip], np.ndarray]
    ser_extractor: Callable[[AudioClip], np.ndarray]
    va_extractor: Callable[[AudioClip], tuple[float, float]]
    prefilter: Callable[[AudioClip], AudioClip] = field(default=lambda clip: clip)
    reentrant: bool = True
    version: str = "custom"


def segment_audio(clip: AudioClip, window_s: float, overlap: float = 0.5) -> list[Segment]:
    if not window_s > 0:
        raise EmotionError(f"window_s must be positive, got {window_s}")
    if not 0.0 <= overlap < 1.0:
        raise EmotionError(f"overlap must lie in [0, 1), got {overlap}")
    n = clip.num_samples
    if n == 0:
        raise EmotionError("cannot segment an empty clip")
    sr = clip.sample_rate
    win = int(round(window_s * sr))
    hop = max(1, int(round(window_s * (1.0 - overlap) * sr)))
    if n <= win:
        starts = [0]
        win = n
    else:
        starts = list(range(0, n - win + 1, hop))
        if starts[-1] + win < n:
            starts.append(n - win)
    return [
        Segment(clip.slice(s, s + win, f"{clip.name}[{i}]"), s / sr, (s + win) / sr)
        for i, s in enumerate(starts)
    ]


def expected_segment_count(num_samples: int, sample_rate: int, window_s: float, overlap: float) -> int:
    """Closed form of the segment count (sample units)."""
    win = int(round(window_s * sample_rate))
    hop = max(1, int(round(window_s * (1.0 - overlap) * sample_rate)))
    if num_samples <= win:
        return 1
    full = (num_samples - win) // hop + 1
    tail = num_samples - ((full - 1) * hop + win)
    return full + (1 if tail > 0 else 0)


def extract_va_sequence(clip: AudioClip, suite: EmotionExtractorSuite, window_s: float,
                        overlap: float = 0.5) -> VASequence:
    segments = segment_audio(suite.prefilter(clip), window_s, overlap)
    pairs = []
    for k, seg in enumerate(segments):
        try:
            v, a = suite.va_extractor(seg.clip)
        except Exception as exc:
            raise ExtractorError(f"VA extractor failed on segment {k} "
                                 f"[{seg.start_s:.3f}s, {seg.end_s:.3f}s]: {exc}") from exc
        pairs.append((float(v), float(a)))
    return VASequence(np.array(pairs), tuple((s.start_s, s.end_s) for s in segments))


def resample_va_to_fixed(seq: VASequence, k_fixed: int) -> np.ndarray:
    """Flatten the VA track to ``2 * k_fixed`` values, interleaved (v, a)."""
    if k_fixed < 1:
        raise EmotionError(f"k_fixed must be >= 1, got {k_fixed}")
    k = len(seq)
    if k == k_fixed:
        return seq.pairs.reshape(-1).copy()
    if k == 1:
        return np.tile(seq.pairs[0], k_fixed)
    src = np.linspace(0.0, 1.0, k)
    dst = np.linspace(0.0, 1.0, k_fixed)
    out = np.empty((k_fixed, 2))
    out[:, 0] = np.interp(dst, src, seq.valence)
    out[:, 1] = np.interp(dst, src, seq.arousal)
    return out.reshape(-1)


def build_emotion_embedding(clip: AudioClip, suite: EmotionExtractorSuite,
                            config: EmotionConfig = EmotionConfig()) -> EmotionEmbedding:
    filtered = suite.prefilter(clip)
    e_text = _checked(suite.text_extractor, filtered, config.d_text, "text_extractor")
    e_ser = _checked(suite.ser_extractor, filtered, config.d_ser, "ser_extractor")
    # prefilter already applied; pass an identity suite view to avoid filtering twice
    va_suite = EmotionExtractorSuite(suite.text_extractor, suite.ser_extractor, suite.va_extractor)
    seq = extract_va_sequence(filtered, va_suite, config.window_s, config.overlap)
    e_va = resample_va_to_fixed(seq, config.k_fixed)
    return EmotionEmbedding(e_text, e_ser, e_va)


def _checked(fn, clip, dim, name) -> np.ndarray:
    try:
        out = np.asarray(fn(clip), dtype=np.float64).reshape(-1)
    except Exception as exc:
        raise ExtractorError(f"{name} failed: {exc}") from exc
    if out.size != dim:
        raise EmotionError(f"{name} returned dimension {out.size}, config expects {dim}")
    if not np.all(np.isfinite(out)):
        raise EmotionError(f"{name} returned non-finite values")
    return out


def save_embedding(path: str | Path, emb: EmotionEmbedding, source_clip: str,
                   config: EmotionConfig) -> Path:
    dims = {"text": int(emb.e_text.size), "ser": int(emb.e_ser.size), "va": int(emb.e_va.size)}
    return save_tensor(path, emb.e_full, dims=dims, source_clip=source_clip, config_hash=_hash(config))


# -- synthetic extractors ----------------------------------------------------

_STAT_NAMES = ("mean", "rms", "peak", "std", "zcr", "bias")
_rng = np.random.default_rng(20240607)
_TEXT_W = _rng.normal(size=(7, len(_STAT_NAMES)))
_SER_W = _rng.normal(size=(8, len(_STAT_NAMES)))
del _rng


def clip_statistics(clip: AudioClip) -> np.ndarray:
    x = clip.samples
    if x.size == 0:
        return np.array([0.0, 0.0, 0.0, 0.0, 0.0, 1.0])
    signs = np.signbit(x)
    zcr = float(np.count_nonzero(signs[1:] != signs[:-1])) / max(x.size - 1, 1)
    return np.array([x.mean(), np.sqrt(np.mean(x * x)), np.abs(x).max(), x.std(), zcr, 1.0])


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def synthetic_sentiment(clip: AudioClip) -> np.ndarray:
    return _softmax(_TEXT_W @ clip_statistics(clip))


def synthetic_ser(clip: AudioClip) -> np.ndarray:
    return _softmax(_SER_W @ clip_statistics(clip))


def synthetic_va(clip: AudioClip) -> tuple[float, float]:
    x = clip.samples
    if x.size == 0:
        return 0.0, 0.0
    return float(np.clip(x.mean(), -1, 1)), float(np.clip(np.sqrt(np.mean(x * x)), -1, 1))


def synthetic_suite() -> EmotionExtractorSuite:
    """Deterministic stand-in: softmax of fixed linear functionals of clip
    statistics for sentiment (7 classes) and SER (8 classes); VA is
    (clipped mean amplitude, clipped RMS)."""
    return EmotionExtractorSuite(synthetic_sentiment, synthetic_ser, synthetic_va,
                                 version="synthetic-v1")


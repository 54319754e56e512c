"""Frozen stand-in for a text encoder: each lowercase word maps to a fixed
pseudo-random vector derived from its SHA-256 digest, plus a position code."""

from __future__ import annotations

import hashlib
import re

import numpy as np
import torch

from .unet import sinusoidal

_WORD = re.compile(r"[a-z0-9']+")


def tokenize(text: str, max_tokens: int = 8) -> list[str]:
    return _WORD.findall(text.lower())[:max_tokens]


def _word_vector(word: str, dim: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(word.encode()).digest()[:8], "little")
    return np.random.default_rng(seed).normal(size=dim) / np.sqrt(dim)


def encode_text(text: str, dim: int = 32, max_tokens: int = 8) -> torch.Tensor:
    """Token matrix [N_t, dim]; N_t = 0 for an empty caption."""
    words = tokenize(text, max_tokens)
    if not words:
        return torch.zeros(0, dim)
    vecs = np.stack([_word_vector(w, dim) for w in words])
    pos = sinusoidal(torch.arange(len(words)), dim).numpy() * 0.1
    return torch.from_numpy(vecs + pos).float()

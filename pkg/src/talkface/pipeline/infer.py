"""Inference: reference image + caption + driving audio -> video frames.

The clip is generated in windows of ``clip_frames`` latents. The first
``motion_frames`` latents come from the audio-to-motion model and serve as the
first window's motion context; each later window is conditioned on the last
``motion_frames`` latents of the window before it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from torch import Tensor

from ..a2m import A2MConfig, A2MModel, a2m_generate, encode_audio_features
from ..audio import AudioClip, num_video_frames, read_wav, write_wav
from ..diffusion import ConditioningBundle, ToyAutoencoder, ddim_sample, encode_text, make_schedule
from ..emotion import EmotionExtractorSuite, build_emotion_embedding, synthetic_suite
from ..io import file_digest, read_checkpoint
from .config import TrainConfig
from .synth import write_png_frames
from .train import DiffusionModels, artifact_paths, fit_features, load_autoencoder, load_stage_checkpoint

ABLATIONS = ("emotion", "motion", "text")


class InferenceError(RuntimeError):
    """A pipeline component failed; ``stage`` names which one."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class InferenceRequest:
    reference_image: np.ndarray  # [3, H, W] in [0, 1]
    caption: str
    audio: AudioClip
    seed: int = 0
    ddim_steps: int = 40
    emotion_suite: EmotionExtractorSuite = field(default_factory=synthetic_suite)
    ablate: frozenset = frozenset()

    def __post_init__(self):
        if self.audio.num_samples == 0:
            raise InferenceError("request", "driving audio is empty")
        unknown = set(self.ablate) - set(ABLATIONS)
        if unknown:
            raise InferenceError("request", f"unknown ablations {sorted(unknown)}")


@dataclass
class TrainedModels:
    cfg: TrainConfig
    autoencoder: ToyAutoencoder
    diffusion: DiffusionModels
    a2m: A2MModel
    digests: dict


@dataclass
class InferenceResult:
    frames: np.ndarray  # [N, 3, H, W]
    latents: Tensor  # [N, C, h, w]
    window_starts: list[int]
    window_contexts: list[Tensor | None]  # motion context fed to each window
    window_outputs: list[Tensor]  # full generated window (before trimming)


def load_models(cfg: TrainConfig) -> TrainedModels:
    paths = artifact_paths(cfg.work_dir)
    for key in ("autoencoder", "stage2", "a2m"):
        if not paths[key].exists():
            raise InferenceError("checkpoints", f"missing {key} checkpoint at {paths[key]}")
    ae = load_autoencoder(paths["autoencoder"])
    diffusion, _ = load_stage_checkpoint(paths["stage2"], cfg)
    diffusion.eval()
    state, manifest = read_checkpoint(paths["a2m"])
    a2m = A2MModel(A2MConfig(**manifest["config"]))
    a2m.load_state_dict(state)
    a2m.eval()
    digests = {k: file_digest(paths[k]) for k in ("autoencoder", "stage2", "a2m")}
    return TrainedModels(cfg, ae, diffusion, a2m, digests)


def _reference_tensor(image: np.ndarray, resolution: int) -> Tensor:
    ref = torch.as_tensor(np.asarray(image, dtype=np.float32))
    if ref.dim() != 3 or ref.shape[0] != 3:
        raise InferenceError("request", f"reference image must be [3, H, W], got {tuple(ref.shape)}")
    if ref.shape[-1] != resolution or ref.shape[-2] != resolution:
        ref = F.interpolate(ref[None], size=(resolution, resolution), mode="bilinear", align_corners=False)[0]
    return ref


@torch.no_grad()
def infer(request: InferenceRequest, models: TrainedModels) -> InferenceResult:
    cfg = models.cfg
    window, m = cfg.clip_frames, cfg.motion_frames
    use_motion = "motion" not in request.ablate and m > 0
    n = num_video_frames(request.audio.num_samples, request.audio.sample_rate)

    try:
        ref_latent = models.autoencoder.encode(_reference_tensor(request.reference_image, cfg.resolution))
        text = encode_text("" if "text" in request.ablate else request.caption, cfg.unet.context_dim)
        ref_feats = models.diffusion.refnet(ref_latent[None], text[None])
    except InferenceError:
        raise
    except Exception as exc:
        raise InferenceError("reference", str(exc)) from exc
    try:
        emb = build_emotion_embedding(request.audio, request.emotion_suite, cfg.emotion).e_full
        emotion = torch.tensor(emb, dtype=torch.float32)[None]
        if "emotion" in request.ablate:
            emotion = torch.zeros_like(emotion)
    except Exception as exc:
        raise InferenceError("emotion", str(exc)) from exc
    try:
        feats = encode_audio_features(request.audio).features
        motion = a2m_generate(ref_latent, request.audio, models.a2m, request.seed).frames if use_motion else None
    except Exception as exc:
        raise InferenceError("a2m", str(exc)) from exc

    n_windows_frames = max(0, n - (m if use_motion else 0))
    padded_len = (m if use_motion else 0) + window * -(-n_windows_frames // window)
    audio_rows = torch.tensor(fit_features(feats, max(padded_len, n)), dtype=torch.float32)

    schedule = make_schedule(cfg.unet.schedule_T, cfg.unet.beta_start, cfg.unet.beta_end)
    unet = models.diffusion.unet
    gen = torch.Generator().manual_seed(int(request.seed))
    out: list[Tensor] = []
    starts, contexts, outputs = [], [], []
    context = None
    pos = 0
    if use_motion:
        out.extend(motion[:min(m, n)])
        context = motion[:m][None]
        pos = m
    while pos < n:
        cond = ConditioningBundle(text[None], None, ref_feats, audio_rows[pos:pos + window][None], emotion,
                                  context)
        x_T = torch.randn((1, window, *ref_latent.shape), generator=gen)
        x = ddim_sample(unet, x_T.shape, cond, schedule, request.ddim_steps, x_T=x_T)
        starts.append(pos)
        contexts.append(None if context is None else context.clone())
        outputs.append(x[0])
        out.extend(x[0, :min(window, n - pos)])
        if use_motion:
            context = x[:, -m:]
        pos += window
    latents = torch.stack(out[:n])
    frames = models.autoencoder.decode(latents).clamp(0.0, 1.0)
    return InferenceResult(frames.numpy().astype(np.float32), latents, starts, contexts, outputs)


def write_video(out_dir: str | Path, result: InferenceResult, audio: AudioClip, meta: dict) -> Path:
    """Video layout: frames/*.png, audio.wav, meta.json."""
    out = Path(out_dir)
    write_png_frames(out / "frames", result.frames)
    write_wav(out / "audio.wav", audio)
    info = {"fps": 25, "num_frames": int(result.frames.shape[0]), **meta}
    (out / "meta.json").write_text(json.dumps(info, sort_keys=True, indent=2) + "\n")
    return out


def infer_to_dir(cfg: TrainConfig, ref_image: str | Path, caption: str, audio_path: str | Path, seed: int,
                 ddim_steps: int, out_dir: str | Path) -> Path:
    models = load_models(cfg)
    ref = read_image(ref_image)
    audio = read_wav(audio_path)
    request = InferenceRequest(ref, caption, audio, seed, ddim_steps)
    result = infer(request, models)
    meta = {"seed": seed, "ddim_steps": ddim_steps, "caption": caption, "config_hash": cfg.hash,
            "checkpoints": models.digests, "windows": result.window_starts}
    return write_video(out_dir, result, audio, meta)


def read_image(path: str | Path) -> np.ndarray:
    """RGB image file as float32 [3, H, W] in [0, 1]."""
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)


__all__ = ["ABLATIONS", "InferenceError", "InferenceRequest", "InferenceResult", "TrainedModels", "infer",
           "infer_to_dir", "load_models", "read_image", "write_video"]

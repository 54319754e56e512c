"""Two-stage training driver.

Stage 1 fits the frozen toy autoencoder (unless a checkpoint exists) and then
trains ReferenceNet + UNet with spatial, cross and temporal attention on the
plain diffusion loss. Stage 2 fits the audio-to-motion model, then continues
ReferenceNet + UNet training with audio attention, emotion tokens and the
auxiliary losses switched on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from ..a2m import A2MModel, a2m_train_step, encode_audio_features
from ..audio import AudioClip, frame_sample_bounds
from ..diffusion import (ATTENTION_ORDER, ConditioningBundle, DenoisingUNet, ReferenceNet, ToyAutoencoder,
                         add_noise, collate_bundles, encode_text, fit_autoencoder, make_schedule, predict_x0)
from ..emotion import build_emotion_embedding, synthetic_suite
from ..io import CheckpointError, read_checkpoint, save_checkpoint, state_digest
from ..losses import (attr_action_loss, au_loss, check_finite, diffusion_simple_loss, emo_loss, sync_loss,
                      total_loss, write_loss_report)
from ..predictors import PredictorSuite, synthetic_predictors
from .config import TrainConfig
from .data import ClipRecord

STAGE_ATTENTION = {1: ("spatial", "cross", "temporal"), 2: ATTENTION_ORDER}
AUX_COMPONENTS = ("sync", "emo", "au", "attr")


class TrainingError(RuntimeError):
    pass


def set_strict_mode(seed: int) -> None:
    """Single-threaded, deterministic kernels, seeded global RNGs."""
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


def artifact_paths(work_dir: str | Path) -> dict[str, Path]:
    w = Path(work_dir)
    return {
        "autoencoder": w / "autoencoder.ckpt",
        "a2m": w / "a2m.ckpt",
        "stage1": w / "stage1.ckpt",
        "stage2": w / "stage2.ckpt",
        "stage1_log": w / "stage1_loss.jsonl",
        "stage2_log": w / "stage2_loss.jsonl",
        "a2m_log": w / "a2m_loss.jsonl",
    }


class DiffusionModels(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.unet = DenoisingUNet(cfg)
        self.refnet = ReferenceNet(cfg)


@dataclass
class PreparedClip:
    name: str
    frames: Tensor  # [F, 3, H, W]
    latents: Tensor  # [F, C, h, w]
    audio: AudioClip
    audio_features: Tensor  # [F, D_a]
    emotion: Tensor  # [D_e]
    text: Tensor  # [N_t, D_ctx]

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def audio_window(self, start: int, stop: int) -> AudioClip:
        lo = frame_sample_bounds(start, self.audio.sample_rate)[0]
        hi = frame_sample_bounds(stop - 1, self.audio.sample_rate)[1]
        return self.audio.slice(lo, hi)


def fit_features(features: np.ndarray, n: int) -> np.ndarray:
    """Truncate or zero-pad per-frame features to exactly ``n`` rows."""
    if features.shape[0] >= n:
        return features[:n]
    return np.concatenate([features, np.zeros((n - features.shape[0], features.shape[1]))])


def prepare_clips(records: Sequence[ClipRecord], ae: ToyAutoencoder, cfg: TrainConfig) -> list[PreparedClip]:
    suite = synthetic_suite()
    out = []
    for rec in records:
        frames = torch.from_numpy(rec.load_frames())
        if frames.shape[-1] != cfg.resolution:
            frames = F.interpolate(frames, size=(cfg.resolution, cfg.resolution), mode="bilinear",
                                   align_corners=False)
        audio = rec.load_audio()
        with torch.no_grad():
            latents = ae.encode(frames)
        feats = fit_features(encode_audio_features(audio).features, frames.shape[0])
        emotion = build_emotion_embedding(audio, suite, cfg.emotion).e_full
        out.append(PreparedClip(rec.name, frames, latents, audio, torch.tensor(feats, dtype=torch.float32),
                                torch.tensor(emotion, dtype=torch.float32), encode_text(rec.caption, cfg.unet.context_dim)))
    return out


@dataclass(frozen=True)
class Draw:
    clip: int
    start: int
    ref_index: int


def draw_window(clips: Sequence[PreparedClip], clip_idx: int, rng: np.random.Generator, cfg: TrainConfig) -> Draw:
    n = clips[clip_idx].num_frames
    lo, hi = cfg.motion_frames, n - cfg.clip_frames
    if hi < lo:
        raise TrainingError(f"clip {clips[clip_idx].name} has {n} frames; need {cfg.clip_frames + cfg.motion_frames}")
    return Draw(clip_idx, int(rng.integers(lo, hi + 1)), int(rng.integers(0, n)))


def build_condition(models: DiffusionModels, clip: PreparedClip, draw: Draw, cfg: TrainConfig,
                    stage: int) -> ConditioningBundle:
    text = clip.text.unsqueeze(0)
    feats = models.refnet(clip.latents[draw.ref_index:draw.ref_index + 1], text)
    m = cfg.motion_frames
    motion = clip.latents[draw.start - m:draw.start].unsqueeze(0) if m else None
    audio = emotion = None
    if stage == 2:
        audio = clip.audio_features[draw.start:draw.start + cfg.clip_frames].unsqueeze(0)
        emotion = clip.emotion.unsqueeze(0)
    return ConditioningBundle(text, None, feats, audio, emotion, motion)


def make_batch(models, clips, draws, cfg, stage) -> tuple[Tensor, ConditioningBundle]:
    x0 = torch.stack([clips[d.clip].latents[d.start:d.start + cfg.clip_frames] for d in draws])
    cond = collate_bundles([build_condition(models, clips[d.clip], d, cfg, stage) for d in draws])
    return x0, cond


def aux_losses(x0_hat: Tensor, ae: ToyAutoencoder, clips, draws, cfg: TrainConfig,
               suite: PredictorSuite) -> dict[str, Tensor]:
    """Auxiliary losses on frames decoded from the single-step x0 estimate."""
    frames_hat = ae.decode(x0_hat)
    parts = {k: [] for k in AUX_COMPONENTS}
    for b, d in enumerate(draws):
        clip = clips[d.clip]
        pred = frames_hat[b]
        stop = d.start + cfg.clip_frames
        gt = clip.frames[d.start:stop]
        audio = clip.audio_window(d.start, stop)
        with torch.no_grad():
            gt_sync = suite.sync_estimator(gt, audio)
            gt_va = suite.video_va_predictor(gt)
            gt_au = suite.au_detector(gt)
            gt_cap = suite.caption_embedder(gt)
        parts["sync"].append(sync_loss(suite.sync_estimator(pred, audio), gt_sync))
        parts["emo"].append(emo_loss(suite.video_va_predictor(pred), gt_va))
        parts["au"].append(au_loss(suite.au_detector(pred), gt_au))
        parts["attr"].append(attr_action_loss(suite.caption_embedder(pred), gt_cap))
    return {k: torch.stack(v).mean() for k, v in parts.items()}


def diffusion_train_step(models: DiffusionModels, optimizer, clips, draws, cfg: TrainConfig, stage: int,
                         schedule, gen: torch.Generator, step: int, ae: ToyAutoencoder | None = None,
                         suite: PredictorSuite | None = None) -> tuple[float, list[dict]]:
    x0, cond = make_batch(models, clips, draws, cfg, stage)
    t = torch.randint(1, schedule.T + 1, (len(draws),), generator=gen)
    eps = torch.randn(x0.shape, generator=gen)
    x_t = add_noise(x0, t, eps, schedule)
    eps_pred = models.unet(x_t, t, cond, STAGE_ATTENTION[stage])
    weights = cfg.weights
    components = {"simple": diffusion_simple_loss(eps_pred, eps)}
    if stage == 2 and any(weights[k] > 0 for k in AUX_COMPONENTS):
        components.update(aux_losses(predict_x0(x_t, t, eps_pred, schedule), ae, clips, draws, cfg, suite))
    check_finite(components, step)
    total, report = total_loss(components, weights)
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return float(total.detach()), report


@torch.no_grad()
def probe_loss(models: DiffusionModels, clips, cfg: TrainConfig, stage: int, schedule) -> float:
    """Plain diffusion loss on fixed, seeded windows and noise, with timesteps
    on an even grid over [1, T] so the heavy small-t tail is always sampled."""
    rng = np.random.default_rng(cfg.seed + 7919)
    gen = torch.Generator().manual_seed(cfg.seed + 7919)
    total = 0.0
    for i in range(cfg.probe_size):
        draw = draw_window(clips, i % len(clips), rng, cfg)
        x0, cond = make_batch(models, clips, [draw], cfg, stage)
        t = torch.tensor([1 + int((schedule.T - 1) * (i + 0.5) / cfg.probe_size)])
        eps = torch.randn(x0.shape, generator=gen)
        pred = models.unet(add_noise(x0, t, eps, schedule), t, cond, STAGE_ATTENTION[stage])
        total += float(diffusion_simple_loss(pred, eps))
    return total / cfg.probe_size


def load_autoencoder(path: str | Path) -> ToyAutoencoder:
    state, manifest = read_checkpoint(path)
    from ..diffusion.autoencoder import AutoencoderConfig
    ae = ToyAutoencoder(AutoencoderConfig(**manifest["config"]))
    ae.load_state_dict(state)
    ae.requires_grad_(False)
    return ae.eval()


def ensure_autoencoder(records, cfg: TrainConfig, log: Callable[[str], None]) -> ToyAutoencoder:
    path = artifact_paths(cfg.work_dir)["autoencoder"]
    if path.exists():
        return load_autoencoder(path)
    bank = []
    for rec in records:
        frames = torch.from_numpy(rec.load_frames())
        if frames.shape[-1] != cfg.resolution:
            frames = F.interpolate(frames, size=(cfg.resolution, cfg.resolution), mode="bilinear",
                                   align_corners=False)
        bank.append(frames)
    log(f"fitting autoencoder on {sum(len(b) for b in bank)} frames")
    ae = fit_autoencoder(torch.cat(bank), cfg.autoencoder, cfg.seed,
                         lambda s, l: log(f"autoencoder step {s} mse {l:.5f}"))
    save_checkpoint(path, ae.state_dict(), cfg.autoencoder, {"seed": cfg.seed, "clips": [r.name for r in records]})
    return load_autoencoder(path)


def _run_diffusion(models, clips, cfg: TrainConfig, stage: int, log_path: Path, ae, suite,
                   log: Callable[[str], None], start_step: int = 0) -> dict:
    schedule = make_schedule(cfg.unet.schedule_T, cfg.unet.beta_start, cfg.unet.beta_end)
    params = list(models.parameters())
    optimizer = torch.optim.Adam(params, lr=cfg.learning_rate)
    rng = np.random.default_rng([cfg.seed, stage, start_step])
    gen = torch.Generator().manual_seed(cfg.seed * 1000 + stage * 100 + start_step)
    probe_initial = probe_loss(models, clips, cfg, stage, schedule)
    mode = "a" if start_step else "w"
    history = []
    with open(log_path, mode) as fh:
        for step in range(start_step + 1, cfg.steps + 1):
            draws = [draw_window(clips, ((step - 1) * cfg.batch_size + b) % len(clips), rng, cfg)
                     for b in range(cfg.batch_size)]
            total, report = diffusion_train_step(models, optimizer, clips, draws, cfg, stage, schedule, gen,
                                                 step, ae, suite)
            write_loss_report(fh, step, report)
            history.append(total)
            if step % 250 == 0 or step == cfg.steps:
                log(f"stage {stage} step {step} loss {np.mean(history[-250:]):.5f}")
    probe_final = probe_loss(models, clips, cfg, stage, schedule)
    log(f"stage {stage} probe loss {probe_initial:.5f} -> {probe_final:.5f}")
    return {"probe_initial": probe_initial, "probe_final": probe_final}


def _resume_point(path: Path, models: nn.Module, resume: bool, cfg: TrainConfig) -> tuple[int, dict]:
    if not (resume and path.exists()):
        return 0, {}
    state, manifest = read_checkpoint(path)
    models.load_state_dict(state)
    meta = manifest["metadata"]
    return int(meta.get("steps_done", 0)), meta


def train_stage1(records: Sequence[ClipRecord], cfg: TrainConfig, resume: bool = False,
                 log: Callable[[str], None] = lambda s: None) -> Path:
    if not records:
        raise TrainingError("stage 1 needs a non-empty dataset")
    cfg = cfg.with_stage(1)
    paths = artifact_paths(cfg.work_dir)
    Path(cfg.work_dir).mkdir(parents=True, exist_ok=True)
    if cfg.strict:
        set_strict_mode(cfg.seed)
    ae = ensure_autoencoder(records, cfg, log)
    frozen_before = state_digest(ae)
    clips = prepare_clips(records, ae, cfg)
    torch.manual_seed(cfg.seed)
    models = DiffusionModels(cfg.unet)
    start, prev = _resume_point(paths["stage1"], models, resume, cfg)
    if start >= cfg.steps:
        return paths["stage1"]
    stats = _run_diffusion(models, clips, cfg, 1, paths["stage1_log"], None, None, log, start)
    if state_digest(ae) != frozen_before:
        raise TrainingError("autoencoder parameters changed during stage 1")
    meta = {"stage": 1, "steps_done": cfg.steps, "autoencoder_digest": frozen_before,
            "clips": [c.name for c in clips],
            "probe_initial": prev.get("probe_initial", stats["probe_initial"]), "probe_final": stats["probe_final"]}
    return save_checkpoint(paths["stage1"], models.state_dict(), cfg.artifact_dict(), meta)


def _a2m_batch(clips, rng, cfg: TrainConfig) -> tuple[Tensor, Tensor, Tensor]:
    length = min(cfg.a2m_window, min(c.num_frames for c in clips))
    motion, audio, ref = [], [], []
    for c in clips:
        s = int(rng.integers(0, c.num_frames - length + 1))
        motion.append(c.latents[s:s + length])
        audio.append(c.audio_features[s:s + length])
        ref.append(c.latents[int(rng.integers(0, c.num_frames))])
    return torch.stack(motion), torch.stack(audio), torch.stack(ref)


def train_a2m(clips, cfg: TrainConfig, log_path: Path, log: Callable[[str], None]) -> A2MModel:
    torch.manual_seed(cfg.seed + 17)
    model = A2MModel(cfg.a2m)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.a2m.lr)
    rng = np.random.default_rng([cfg.seed, 17])
    gen = torch.Generator().manual_seed(cfg.seed + 17)
    with open(log_path, "w") as fh:
        for step in range(1, cfg.a2m_steps + 1):
            out = a2m_train_step(model, optimizer, _a2m_batch(clips, rng, cfg), step, cfg.a2m_steps, gen)
            fh.write(json.dumps({"step": step, **out}, sort_keys=True) + "\n")
            if step % 500 == 0 or step == cfg.a2m_steps:
                log(f"a2m step {step} mse {out['mse']:.5f}")
    return model


def load_stage_checkpoint(path: str | Path, cfg: TrainConfig) -> tuple[DiffusionModels, dict]:
    state, manifest = read_checkpoint(path)
    models = DiffusionModels(cfg.unet)
    models.load_state_dict(state)
    return models, manifest


def train_stage2(records: Sequence[ClipRecord], cfg: TrainConfig, stage1_checkpoint: str | Path | None = None,
                 resume: bool = False, log: Callable[[str], None] = lambda s: None) -> Path:
    if not records:
        raise TrainingError("stage 2 needs a non-empty dataset")
    cfg = cfg.with_stage(2)
    paths = artifact_paths(cfg.work_dir)
    stage1_checkpoint = Path(stage1_checkpoint or paths["stage1"])
    if not stage1_checkpoint.exists():
        raise CheckpointError(f"stage 2 needs a stage-1 checkpoint; {stage1_checkpoint} is missing")
    if not paths["autoencoder"].exists():
        raise CheckpointError(f"autoencoder checkpoint {paths['autoencoder']} is missing; run stage 1 first")
    if cfg.strict:
        set_strict_mode(cfg.seed)
    ae = load_autoencoder(paths["autoencoder"])
    frozen_before = state_digest(ae)
    clips = prepare_clips(records, ae, cfg)

    models, s1 = load_stage_checkpoint(stage1_checkpoint, cfg)
    if s1["metadata"].get("autoencoder_digest") != frozen_before:
        raise TrainingError("stage-1 checkpoint was trained against a different autoencoder")
    start, prev = _resume_point(paths["stage2"], models, resume, cfg)
    if start >= cfg.steps:
        return paths["stage2"]
    if start == 0 or not paths["a2m"].exists():
        a2m = train_a2m(clips, cfg, paths["a2m_log"], log)
        save_checkpoint(paths["a2m"], a2m.state_dict(), cfg.a2m, {"seed": cfg.seed, "steps": cfg.a2m_steps})

    suite = synthetic_predictors(cfg.emotion)
    stats = _run_diffusion(models, clips, cfg, 2, paths["stage2_log"], ae, suite, log, start)
    if state_digest(ae) != frozen_before:
        raise TrainingError("autoencoder parameters changed during stage 2")
    meta = {"stage": 2, "steps_done": cfg.steps, "autoencoder_digest": frozen_before,
            "clips": [c.name for c in clips], "stage1_probe_initial": s1["metadata"].get("probe_initial"),
            "probe_initial": prev.get("probe_initial", stats["probe_initial"]), "probe_final": stats["probe_final"],
            "predictors": suite.version}
    return save_checkpoint(paths["stage2"], models.state_dict(), cfg.artifact_dict(), meta)

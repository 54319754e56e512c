"""Audio-to-motion: a conditional VAE whose posterior sample is pushed through a
volume-preserving flow before decoding per-frame motion latents."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .audio import VIDEO_FPS, AudioClip, frame_sample_bounds, num_video_frames


class A2MError(ValueError):
    pass


@dataclass(frozen=True)
class A2MConfig:
    latent_dim: int = 32
    flow_depth: int = 4
    flow_hidden: int = 64
    audio_dim: int = 8
    motion_channels: int = 4
    motion_size: int = 8
    enc_hidden: int = 128
    dec_hidden: int = 128
    scale_clamp: float = 20.0
    beta: float = 1e-2
    beta_warmup: float = 0.1
    lr: float = 1e-3

    @property
    def motion_numel(self) -> int:
        return self.motion_channels * self.motion_size * self.motion_size

    @property
    def cond_dim(self) -> int:
        # mean-pooled audio summary + flattened reference latent
        return self.audio_dim + self.motion_numel

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AudioFeatureSequence:
    features: np.ndarray  # [F, D_a]
    source_duration_s: float
    fps: int = VIDEO_FPS

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    def tensor(self, dtype=torch.float32) -> Tensor:
        return torch.as_tensor(self.features, dtype=dtype)


@dataclass(frozen=True)
class GaussianLatent:
    mu: Tensor
    log_sigma: Tensor

    @property
    def sigma(self) -> Tensor:
        return torch.exp(self.log_sigma)


@dataclass(frozen=True)
class FlowState:
    z: Tensor
    log_det: Tensor


@dataclass(frozen=True)
class MotionFrames:
    frames: Tensor  # [F, C, H, W]

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


# -- audio features ----------------------------------------------------------

def synthetic_audio_features(clip: AudioClip, dim: int = 8) -> np.ndarray:
    """Stand-in for a speech encoder: log band energies of the spectrum of the
    samples belonging to each 25 fps video frame."""
    n_frames = num_video_frames(clip.num_samples, clip.sample_rate)
    win = frame_sample_bounds(1, clip.sample_rate)[1]
    out = np.zeros((n_frames, dim))
    for f in range(n_frames):
        lo, hi = frame_sample_bounds(f, clip.sample_rate)
        seg = np.zeros(win)
        chunk = clip.samples[lo:hi]
        seg[:chunk.size] = chunk
        power = np.abs(np.fft.rfft(seg)) ** 2 / win
        bands = np.array_split(power[1:], dim)
        out[f] = np.log1p(1000.0 * np.array([b.mean() for b in bands]))
    return out


def encode_audio_features(clip: AudioClip,
                          extractor: Callable[[AudioClip], np.ndarray] = synthetic_audio_features
                          ) -> AudioFeatureSequence:
    if clip.num_samples == 0:
        raise A2MError("cannot extract features from a zero-length clip")
    feats = np.asarray(extractor(clip), dtype=np.float64)
    expected = num_video_frames(clip.num_samples, clip.sample_rate)
    if feats.ndim != 2 or feats.shape[0] != expected:
        raise A2MError(f"extractor returned shape {feats.shape}, expected ({expected}, D)")
    if not np.all(np.isfinite(feats)):
        raise A2MError("audio features contain non-finite values")
    return AudioFeatureSequence(feats, clip.duration_s)


# -- flow ----------------------------------------------------------------------

class CouplingLayer(nn.Module):
    """Affine coupling with a residual conditioner and mean-centred log-scales,
    so the Jacobian determinant is exactly one."""

    def __init__(self, dim: int, cond_dim: int, hidden: int, clamp: float = 20.0):
        super().__init__()
        self.half = dim // 2
        self.clamp = clamp
        self.inp = nn.Linear(self.half + cond_dim, hidden)
        self.mid = nn.Linear(hidden, hidden)
        self.out = nn.Linear(hidden, 2 * self.half)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def _shift_logscale(self, xa: Tensor, cond: Tensor) -> tuple[Tensor, Tensor]:
        h = F.silu(self.inp(torch.cat([xa, cond], dim=-1)))
        h = h + F.silu(self.mid(h))
        shift, raw = self.out(h).chunk(2, dim=-1)
        raw = raw.clamp(-self.clamp, self.clamp)
        return shift, raw - raw.mean(dim=-1, keepdim=True)

    def forward(self, z: Tensor, cond: Tensor) -> tuple[Tensor, Tensor]:
        xa, xb = z[..., :self.half], z[..., self.half:]
        shift, log_s = self._shift_logscale(xa, cond)
        yb = xb * torch.exp(log_s) + shift
        return torch.cat([xa, yb], dim=-1), log_s.sum(dim=-1)

    def inverse(self, z: Tensor, cond: Tensor) -> Tensor:
        xa, yb = z[..., :self.half], z[..., self.half:]
        shift, log_s = self._shift_logscale(xa, cond)
        return torch.cat([xa, (yb - shift) * torch.exp(-log_s)], dim=-1)


class VPFlow(nn.Module):
    def __init__(self, dim: int = 32, cond_dim: int = 0, depth: int = 4, hidden: int = 64,
                 clamp: float = 20.0):
        super().__init__()
        if dim % 2:
            raise A2MError(f"flow latent dimension must be even, got {dim}")
        self.dim = dim
        self.cond_dim = cond_dim
        self.layers = nn.ModuleList(CouplingLayer(dim, cond_dim, hidden, clamp) for _ in range(depth))

    def forward(self, z: Tensor, cond: Tensor) -> tuple[Tensor, Tensor]:
        log_det = z.new_zeros(z.shape[:-1])
        for layer in self.layers:
            z, ld = layer(z, cond)
            z = z.flip(-1)
            log_det = log_det + ld
        return z, log_det

    def inverse(self, z: Tensor, cond: Tensor) -> Tensor:
        for layer in reversed(self.layers):
            z = layer.inverse(z.flip(-1), cond)
        return z


def _check_even(flow: VPFlow, z: Tensor) -> None:
    if z.shape[-1] != flow.dim or z.shape[-1] % 2:
        raise A2MError(f"latent of size {z.shape[-1]} does not fit a flow over {flow.dim} (even) dims")


def vp_flow_forward(flow: VPFlow, z_q: Tensor, cond: Tensor) -> FlowState:
    _check_even(flow, z_q)
    z, log_det = flow(z_q, cond)
    return FlowState(z, log_det)


def vp_flow_inverse(flow: VPFlow, z_p: Tensor, cond: Tensor) -> Tensor:
    _check_even(flow, z_p)
    return flow.inverse(z_p, cond)


# -- VAE -----------------------------------------------------------------------

class MotionEncoder(nn.Module):
    def __init__(self, cfg: A2MConfig):
        super().__init__()
        self.frame = nn.Linear(cfg.motion_numel + cfg.audio_dim, cfg.enc_hidden)
        self.mix = nn.Linear(cfg.enc_hidden, cfg.enc_hidden)
        self.head = nn.Linear(cfg.enc_hidden, 2 * cfg.latent_dim)

    def forward(self, motion: Tensor, audio: Tensor) -> tuple[Tensor, Tensor]:
        x = torch.cat([motion.flatten(-3), audio], dim=-1)
        h = F.silu(self.frame(x))
        h = F.silu(self.mix(h)).mean(dim=-2)
        mu, log_sigma = self.head(h).chunk(2, dim=-1)
        return mu, log_sigma


class MotionDecoder(nn.Module):
    def __init__(self, cfg: A2MConfig):
        super().__init__()
        self.shape = (cfg.motion_channels, cfg.motion_size, cfg.motion_size)
        self.ref = nn.Linear(cfg.motion_numel, cfg.dec_hidden)
        self.frame = nn.Linear(cfg.latent_dim + 3 * cfg.audio_dim, cfg.dec_hidden)
        self.mid = nn.Linear(cfg.dec_hidden, cfg.dec_hidden)
        self.out = nn.Linear(cfg.dec_hidden, cfg.motion_numel)

    def forward(self, z_p: Tensor, audio: Tensor, ref: Tensor) -> Tensor:
        # audio: [B, F, D]; each frame sees its neighbours at t-1 and t+1
        ctx = F.pad(audio, (0, 0, 1, 1))
        ctx = torch.cat([ctx[:, :-2], ctx[:, 1:-1], ctx[:, 2:]], dim=-1)
        n_frames = audio.shape[1]
        z = z_p.unsqueeze(1).expand(-1, n_frames, -1)
        h = self.frame(torch.cat([z, ctx], dim=-1)) + self.ref(ref.flatten(1)).unsqueeze(1)
        h = F.silu(h)
        h = h + F.silu(self.mid(h))
        return self.out(h).reshape(*audio.shape[:2], *self.shape)


class A2MModel(nn.Module):
    def __init__(self, cfg: A2MConfig = A2MConfig()):
        super().__init__()
        self.cfg = cfg
        self.encoder = MotionEncoder(cfg)
        self.flow = VPFlow(cfg.latent_dim, cfg.cond_dim, cfg.flow_depth, cfg.flow_hidden, cfg.scale_clamp)
        self.decoder = MotionDecoder(cfg)

    def condition(self, audio: Tensor, ref: Tensor) -> Tensor:
        return torch.cat([audio.mean(dim=-2), ref.flatten(1)], dim=-1)

    def reconstruct(self, motion: Tensor, audio: Tensor, ref: Tensor, z_q: Tensor | None = None) -> Tensor:
        mu, log_sigma = self.encoder(motion, audio)
        z_q = mu if z_q is None else z_q
        z_p, _ = self.flow(z_q, self.condition(audio, ref))
        return self.decoder(z_p, audio, ref)


def zero_init_(module: nn.Module) -> nn.Module:
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


def randomize_(module: nn.Module, std: float = 0.3, seed: int = 0) -> nn.Module:
    """Fill every parameter with seeded Gaussian noise (tests and stress runs)."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * std)
    return module


def _batched_audio(audio: AudioFeatureSequence | Tensor, dtype) -> Tensor:
    t = audio.tensor(dtype) if isinstance(audio, AudioFeatureSequence) else audio
    return t.unsqueeze(0) if t.dim() == 2 else t


def vae_encode(model: A2MModel, motion: MotionFrames | Tensor, audio: AudioFeatureSequence | Tensor
               ) -> GaussianLatent:
    frames = motion.frames if isinstance(motion, MotionFrames) else motion
    dtype = next(model.parameters()).dtype
    a = _batched_audio(audio, dtype)
    m = frames.unsqueeze(0) if frames.dim() == 4 else frames
    if m.shape[1] != a.shape[1]:
        raise A2MError(f"motion has {m.shape[1]} frames but audio has {a.shape[1]}")
    mu, log_sigma = model.encoder(m.to(dtype), a)
    if frames.dim() == 4:
        mu, log_sigma = mu[0], log_sigma[0]
    return GaussianLatent(mu, log_sigma)


def sample_latent(g: GaussianLatent, seed: int | torch.Generator) -> Tensor:
    gen = seed if isinstance(seed, torch.Generator) else torch.Generator().manual_seed(int(seed))
    eps = torch.randn(g.mu.shape, generator=gen, dtype=g.mu.dtype)
    sigma = torch.exp(g.log_sigma).clamp_min(1e-6)
    return g.mu + sigma * eps


def vae_decode(model: A2MModel, z_p: Tensor, audio: AudioFeatureSequence | Tensor, ref: Tensor) -> MotionFrames:
    dtype = next(model.parameters()).dtype
    a = _batched_audio(audio, dtype)
    z = z_p.unsqueeze(0) if z_p.dim() == 1 else z_p
    r = ref.unsqueeze(0) if ref.dim() == 3 else ref
    out = model.decoder(z.to(dtype), a, r.to(dtype))
    return MotionFrames(out[0] if z_p.dim() == 1 else out)


def a2m_generate(ref_latent: Tensor, clip: AudioClip, model: A2MModel, seed: int,
                 extractor: Callable[[AudioClip], np.ndarray] | None = None) -> MotionFrames:
    """audio features -> z_q ~ N(0, I) (seeded) -> flow -> decoder."""
    feats = encode_audio_features(clip, extractor or (lambda c: synthetic_audio_features(c, model.cfg.audio_dim)))
    dtype = next(model.parameters()).dtype
    audio = feats.tensor(dtype).unsqueeze(0)
    ref = ref_latent.to(dtype).unsqueeze(0)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        z_q = torch.randn((1, model.cfg.latent_dim), generator=gen, dtype=dtype)
        z_p, _ = model.flow(z_q, model.condition(audio, ref))
        frames = model.decoder(z_p, audio, ref)
    return MotionFrames(frames[0])


def kl_standard_normal(mu: Tensor, log_sigma: Tensor) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) summed over the last axis."""
    return 0.5 * (mu ** 2 + torch.exp(2 * log_sigma) - 1.0 - 2 * log_sigma).sum(dim=-1)


def beta_at(cfg: A2MConfig, step: int, total_steps: int) -> float:
    warm = cfg.beta_warmup * total_steps
    if warm <= 0:
        return cfg.beta
    return cfg.beta * min(1.0, step / warm)


def a2m_loss(model: A2MModel, motion: Tensor, audio: Tensor, ref: Tensor, beta: float,
             generator: torch.Generator | None = None) -> dict[str, Tensor]:
    mu, log_sigma = model.encoder(motion, audio)
    eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
    z_q = mu + torch.exp(log_sigma).clamp_min(1e-6) * eps
    z_p, log_det = model.flow(z_q, model.condition(audio, ref))
    recon = model.decoder(z_p, audio, ref)
    mse = F.mse_loss(recon, motion)
    # prior evaluated on flow^-1(z_p) = z_q; log_det is identically zero
    kl = kl_standard_normal(mu, log_sigma).mean()
    return {"loss": mse + beta * kl, "mse": mse, "kl": kl, "log_det": log_det.abs().max()}


def a2m_train_step(model: A2MModel, optimizer: torch.optim.Optimizer, batch: tuple[Tensor, Tensor, Tensor],
                   step: int, total_steps: int, generator: torch.Generator | None = None) -> dict[str, float]:
    motion, audio, ref = batch
    if motion.shape[1] != audio.shape[1]:
        raise A2MError(f"batch motion has {motion.shape[1]} frames, audio {audio.shape[1]}")
    beta = beta_at(model.cfg, step, total_steps)
    out = a2m_loss(model, motion, audio, ref, beta, generator)
    if not torch.isfinite(out["loss"]):
        raise FloatingPointError(
            f"A2M loss is not finite at step {step}: mse={out['mse'].item()}, kl={out['kl'].item()}")
    optimizer.zero_grad()
    out["loss"].backward()
    optimizer.step()
    return {k: float(v.detach()) for k, v in out.items()} | {"beta": beta}


def overfit_pair(model: A2MModel, motion: Tensor, audio: Tensor, ref: Tensor, steps: int = 2000,
                 seed: int = 0) -> list[float]:
    opt = torch.optim.Adam(model.parameters(), lr=model.cfg.lr)
    gen = torch.Generator().manual_seed(seed)
    history = []
    for step in range(steps):
        history.append(a2m_train_step(model, opt, (motion, audio, ref), step, steps, gen)["mse"])
    return history


def num_parameters(module: nn.Module) -> int:
    return sum(math.prod(p.shape) for p in module.parameters())

"""Toy denoising UNet for latent video and its ReferenceNet twin.

Every transformer block applies, in order: spatial self-attention (reference
tokens appended to keys/values), audio attention, cross attention over
text + emotion tokens, and temporal attention across frames (motion-frame
latents appended as prefix keys/values only). Frames are folded into the batch
axis everywhere except temporal attention, so with that layer disabled each
frame is computed independently of the others.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .schedule import make_schedule

ATTENTION_ORDER = ("spatial", "audio", "cross", "temporal")


class ConditioningError(ValueError):
    pass


@dataclass(frozen=True)
class UNetConfig:
    latent_channels: int = 4
    latent_size: int = 8
    width: int = 32
    heads: int = 2
    audio_dim: int = 8
    audio_radius: int = 0
    context_dim: int = 32
    emotion_dim: int = 27
    emotion_tokens: int = 1
    time_dim: int = 128
    # the network regresses v = sqrt(ab) * eps - sqrt(1 - ab) * x0 and converts to eps
    prediction: str = "v"
    schedule_T: int = 100
    beta_start: float = 1e-3
    beta_end: float = 0.1

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def block_channels(self) -> tuple[int, int, int]:
        return (self.width, 2 * self.width, self.width)

    @property
    def block_sizes(self) -> tuple[int, int, int]:
        return (self.latent_size, self.latent_size // 2, self.latent_size)

    def ref_feature_shapes(self) -> list[tuple[int, int, int]]:
        return [(c, s, s) for c, s in zip(self.block_channels, self.block_sizes)]


@dataclass
class ConditioningBundle:
    """Batched conditioning for one denoiser call (batch axis first)."""

    text_embed: Tensor  # [B, N_t, D_ctx]
    text_mask: Tensor | None = None  # [B, N_t] bool, True = valid
    ref_features: list[Tensor] | None = None  # per block [B, C_b, H_b, W_b]
    audio_features: Tensor | None = None  # [B, F_a, D_a]
    emotion_embed: Tensor | None = None  # [B, D_e]
    motion_frames: Tensor | None = None  # [B, M, C, H, W]

    def replace(self, **changes) -> "ConditioningBundle":
        return replace(self, **changes)

    def repeat(self, n: int) -> "ConditioningBundle":
        def rep(x):
            return None if x is None else x.repeat_interleave(n, dim=0)
        return ConditioningBundle(
            rep(self.text_embed), rep(self.text_mask),
            None if self.ref_features is None else [rep(r) for r in self.ref_features],
            rep(self.audio_features), rep(self.emotion_embed), rep(self.motion_frames))


def collate_bundles(bundles: Sequence[ConditioningBundle]) -> ConditioningBundle:
    """Stack per-sample bundles (each with batch size 1), padding text tokens."""
    def cat(xs):
        if any(x is None for x in xs):
            if all(x is None for x in xs):
                return None
            raise ConditioningError("cannot batch bundles where only some carry a field")
        return torch.cat(xs, dim=0)

    n_tok = max(b.text_embed.shape[1] for b in bundles)
    texts, masks = [], []
    for b in bundles:
        pad = n_tok - b.text_embed.shape[1]
        mask = b.text_mask if b.text_mask is not None else torch.ones(b.text_embed.shape[:2], dtype=torch.bool)
        texts.append(F.pad(b.text_embed, (0, 0, 0, pad)))
        masks.append(F.pad(mask, (0, pad), value=False))
    refs = None
    if bundles[0].ref_features is not None:
        refs = [torch.cat([b.ref_features[i] for b in bundles]) for i in range(len(bundles[0].ref_features))]
    return ConditioningBundle(
        torch.cat(texts), torch.cat(masks), refs,
        cat([b.audio_features for b in bundles]), cat([b.emotion_embed for b in bundles]),
        cat([b.motion_frames for b in bundles]))


def sinusoidal(positions: Tensor, dim: int) -> Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    ang = positions.to(torch.float64)[..., None] * freqs
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


class Attention(nn.Module):
    """Multi-head attention with optional key mask and a learned null key/value
    (so a query always has something to attend to)."""

    def __init__(self, dim: int, ctx_dim: int | None = None, heads: int = 2, null_kv: bool = False):
        super().__init__()
        ctx_dim = ctx_dim or dim
        self.heads = heads
        self.q = nn.Linear(dim, dim, bias=False)
        self.k = nn.Linear(ctx_dim, dim, bias=False)
        self.v = nn.Linear(ctx_dim, dim, bias=False)
        self.out = nn.Linear(dim, dim)
        self.null_kv = nn.Parameter(torch.randn(2, dim) * 0.02) if null_kv else None

    def forward(self, x: Tensor, ctx: Tensor | None = None, mask: Tensor | None = None) -> Tensor:
        ctx = x if ctx is None else ctx
        n, lq, d = x.shape
        h = self.heads
        q = self.q(x)
        k = self.k(ctx)
        v = self.v(ctx)
        if self.null_kv is not None:
            nk = self.null_kv[0].to(k.dtype).expand(n, 1, d)
            nv = self.null_kv[1].to(v.dtype).expand(n, 1, d)
            k = torch.cat([nk, k], dim=1)
            v = torch.cat([nv, v], dim=1)
            if mask is not None:
                mask = F.pad(mask, (1, 0), value=True)
        q = q.reshape(n, lq, h, d // h).transpose(1, 2)
        k = k.reshape(n, -1, h, d // h).transpose(1, 2)
        v = v.reshape(n, -1, h, d // h).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // h)
        if mask is not None:
            scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        att = scores.softmax(dim=-1)
        out = (att @ v).transpose(1, 2).reshape(n, lq, d)
        return self.out(out)


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, cfg: UNetConfig):
        super().__init__()
        self.dim = dim
        self.norm_spatial = nn.LayerNorm(dim)
        self.spatial = Attention(dim, heads=cfg.heads)
        self.norm_audio = nn.LayerNorm(dim)
        self.audio = Attention(dim, cfg.audio_dim, cfg.heads, null_kv=True)
        self.norm_cross = nn.LayerNorm(dim)
        self.cross = Attention(dim, cfg.context_dim, cfg.heads, null_kv=True)
        self.norm_temporal = nn.LayerNorm(dim)
        self.temporal = Attention(dim, heads=cfg.heads)
        self.motion_proj = nn.Linear(cfg.latent_channels, dim)
        self.norm_ff = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim))

    def forward(self, h: Tensor, n_frames: int, *, ref: Tensor | None, audio: Tensor | None,
                audio_mask: Tensor | None, context: Tensor | None, context_mask: Tensor | None,
                motion: Tensor | None, enabled: frozenset, capture: list | None = None) -> Tensor:
        # h: [B*F, C, H, W]
        bf, c, hh, ww = h.shape
        b = bf // n_frames
        x = h.flatten(2).transpose(1, 2)  # [B*F, HW, C]

        if "spatial" in enabled:
            xn = self.norm_spatial(x)
            if capture is not None:
                capture.append(xn)
            kv = xn
            if ref is not None:
                kv = torch.cat([xn, ref.repeat_interleave(n_frames, dim=0)], dim=1)
            x = x + self.spatial(xn, kv)

        if "audio" in enabled and audio is not None:
            x = x + self.audio(self.norm_audio(x), audio, audio_mask)

        if "cross" in enabled and context is not None:
            x = x + self.cross(self.norm_cross(x), context, context_mask)

        if "temporal" in enabled:
            x = self._temporal(x, b, n_frames, motion, (hh, ww))

        x = x + self.ff(self.norm_ff(x))
        return x.transpose(1, 2).reshape(bf, c, hh, ww)

    def _temporal(self, x: Tensor, b: int, n_frames: int, motion: Tensor | None, size) -> Tensor:
        hw = x.shape[1]
        c = self.dim
        tok = x.reshape(b, n_frames, hw, c).transpose(1, 2).reshape(b * hw, n_frames, c)
        n_prefix = 0 if motion is None else motion.shape[1]
        pos = sinusoidal(torch.arange(n_prefix + n_frames), c).to(x.dtype)
        q = self.norm_temporal(tok) + pos[n_prefix:]
        kv = q
        if motion is not None:
            m = F.adaptive_avg_pool2d(motion.flatten(0, 1), size)  # [B*M, C_lat, H, W]
            m = self.motion_proj(m.flatten(2).transpose(1, 2))  # [B*M, HW, C]
            m = m.reshape(b, n_prefix, hw, c).transpose(1, 2).reshape(b * hw, n_prefix, c)
            kv = torch.cat([self.norm_temporal(m) + pos[:n_prefix], q], dim=1)
        out = self.temporal(q, kv)
        out = out.reshape(b, hw, n_frames, c).transpose(1, 2).reshape(b * n_frames, hw, c)
        return x + out


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.time = nn.Linear(time_dim, c_out)
        self.norm2 = nn.GroupNorm(8, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: Tensor, temb: Tensor) -> Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class DenoisingUNet(nn.Module):
    """Predicts the noise of a latent video [B, F, C, H, W] at timestep t."""

    def __init__(self, cfg: UNetConfig = UNetConfig()):
        super().__init__()
        self.cfg = cfg
        w = cfg.width
        self.time_mlp = nn.Sequential(nn.Linear(w, cfg.time_dim), nn.SiLU(), nn.Linear(cfg.time_dim, cfg.time_dim))
        self.conv_in = nn.Conv2d(cfg.latent_channels, w, 3, padding=1)
        self.res_down = ResBlock(w, w, cfg.time_dim)
        self.tb_down = TransformerBlock(w, cfg)
        self.downsample = nn.Conv2d(w, 2 * w, 3, stride=2, padding=1)
        self.res_mid = ResBlock(2 * w, 2 * w, cfg.time_dim)
        self.tb_mid = TransformerBlock(2 * w, cfg)
        self.upsample = nn.Conv2d(2 * w, w, 3, padding=1)
        self.res_up = ResBlock(2 * w, w, cfg.time_dim)
        self.tb_up = TransformerBlock(w, cfg)
        self.norm_out = nn.GroupNorm(8, w)
        self.conv_out = nn.Conv2d(w, cfg.latent_channels, 3, padding=1)
        self.emotion_proj = nn.Linear(cfg.emotion_dim, cfg.emotion_tokens * cfg.context_dim)
        schedule = make_schedule(cfg.schedule_T, cfg.beta_start, cfg.beta_end)
        self.register_buffer("alphas_bar", schedule.alphas_bar, persistent=False)

    @property
    def blocks(self) -> list[TransformerBlock]:
        return [self.tb_down, self.tb_mid, self.tb_up]

    def forward(self, x: Tensor, t: Tensor, cond: ConditioningBundle,
                enabled: Sequence[str] = ATTENTION_ORDER) -> Tensor:
        out, _ = self._run(x, t, cond, frozenset(enabled), capture=False)
        return out

    def _context(self, cond: ConditioningBundle, batch: int, dtype) -> tuple[Tensor | None, Tensor | None]:
        parts, masks = [], []
        if cond.text_embed is not None and cond.text_embed.shape[1] > 0:
            parts.append(cond.text_embed.to(dtype))
            m = cond.text_mask
            masks.append(m if m is not None else torch.ones(cond.text_embed.shape[:2], dtype=torch.bool))
        if cond.emotion_embed is not None:
            e = self.emotion_proj(cond.emotion_embed.to(dtype))
            e = e.reshape(batch, self.cfg.emotion_tokens, self.cfg.context_dim)
            parts.append(e)
            masks.append(torch.ones(e.shape[:2], dtype=torch.bool))
        if not parts:
            return None, None
        return torch.cat(parts, dim=1), torch.cat(masks, dim=1)

    def _audio_windows(self, audio: Tensor, n_frames: int, dtype) -> tuple[Tensor, Tensor]:
        r = self.cfg.audio_radius
        b, f_a, d = audio.shape
        if f_a < n_frames:
            raise ConditioningError(f"{f_a} audio feature rows for {n_frames} frames")
        a = F.pad(audio[:, :n_frames].to(dtype), (0, 0, r, r))
        valid = F.pad(torch.ones(b, n_frames, dtype=torch.bool), (r, r), value=False)
        win = a.unfold(1, 2 * r + 1, 1).permute(0, 1, 3, 2)  # [B, F, 2r+1, D]
        mask = valid.unfold(1, 2 * r + 1, 1)  # [B, F, 2r+1]
        return win.reshape(b * n_frames, 2 * r + 1, d), mask.reshape(b * n_frames, 2 * r + 1)

    def _run(self, x: Tensor, t: Tensor, cond: ConditioningBundle, enabled: frozenset, capture: bool):
        if x.dim() != 5:
            raise ConditioningError(f"expected latent video [B, F, C, H, W], got {tuple(x.shape)}")
        b, n_frames = x.shape[:2]
        dtype = x.dtype
        t = torch.as_tensor(t).reshape(-1)
        if t.numel() == 1:
            t = t.expand(b)
        temb = self.time_mlp(sinusoidal(t, self.cfg.width).to(dtype)).repeat_interleave(n_frames, dim=0)

        refs = cond.ref_features
        if refs is not None:
            if len(refs) != len(self.blocks):
                raise ConditioningError(f"{len(refs)} reference feature maps for {len(self.blocks)} blocks")
            for i, (r, shape) in enumerate(zip(refs, self.cfg.ref_feature_shapes())):
                if tuple(r.shape[1:]) != shape:
                    raise ConditioningError(f"block {i}: reference features {tuple(r.shape[1:])}, expected {shape}")
            refs = [r.to(dtype).flatten(2).transpose(1, 2) for r in refs]
        audio = audio_mask = None
        if "audio" in enabled and cond.audio_features is not None:
            audio, audio_mask = self._audio_windows(cond.audio_features, n_frames, dtype)
        context, context_mask = self._context(cond, b, dtype)
        if context is not None:
            context = context.repeat_interleave(n_frames, dim=0)
            context_mask = context_mask.repeat_interleave(n_frames, dim=0)
        motion = cond.motion_frames.to(dtype) if cond.motion_frames is not None else None

        captured: list[Tensor] | None = [] if capture else None
        kw = dict(audio=audio, audio_mask=audio_mask, context=context, context_mask=context_mask,
                  motion=motion, enabled=enabled, capture=captured)

        def ref_at(i):
            return None if refs is None else refs[i]

        h = self.conv_in(x.flatten(0, 1))
        h = self.res_down(h, temb)
        h = self.tb_down(h, n_frames, ref=ref_at(0), **kw)
        skip = h
        h = self.downsample(h)
        h = self.res_mid(h, temb)
        h = self.tb_mid(h, n_frames, ref=ref_at(1), **kw)
        h = self.upsample(F.interpolate(h, scale_factor=2, mode="nearest"))
        h = self.res_up(torch.cat([h, skip], dim=1), temb)
        h = self.tb_up(h, n_frames, ref=ref_at(2), **kw)
        if capture:
            return None, captured
        out = self.conv_out(F.silu(self.norm_out(h))).reshape(x.shape)
        if self.cfg.prediction == "v":
            ab = self.alphas_bar[t].to(dtype).reshape(-1, 1, 1, 1, 1)
            out = torch.sqrt(ab) * out + torch.sqrt(1.0 - ab) * x
        return out, captured


class ReferenceNet(DenoisingUNet):
    """Same architecture; encodes a single reference latent (t = 0, text cross
    attention only) and donates the normalized spatial-attention inputs of each
    block."""

    def forward(self, ref_latent: Tensor, text_embed: Tensor, text_mask: Tensor | None = None) -> list[Tensor]:
        if ref_latent.dim() == 3:
            ref_latent = ref_latent.unsqueeze(0)
        b = ref_latent.shape[0]
        cond = ConditioningBundle(text_embed, text_mask)
        _, captured = self._run(ref_latent.unsqueeze(1), torch.zeros(b, dtype=torch.long), cond,
                                frozenset({"spatial", "cross"}), capture=True)
        feats = []
        for tok, (c, s, _) in zip(captured, self.cfg.ref_feature_shapes()):
            feats.append(tok.transpose(1, 2).reshape(b, c, s, s))
        return feats


def referencenet_forward(refnet: ReferenceNet, ref_latent: Tensor, text_embed: Tensor,
                         text_mask: Tensor | None = None) -> list[Tensor]:
    if text_embed.dim() == 2:
        text_embed = text_embed.unsqueeze(0)
    return refnet(ref_latent, text_embed, text_mask)


def unet_forward(unet: DenoisingUNet, x_t: Tensor, t, cond: ConditioningBundle,
                 enabled: Sequence[str] = ATTENTION_ORDER) -> Tensor:
    """Accepts a single latent video [F, C, H, W] or a batch [B, F, C, H, W]."""
    single = x_t.dim() == 4
    out = unet(x_t.unsqueeze(0) if single else x_t, torch.as_tensor(t), cond, enabled)
    return out[0] if single else out

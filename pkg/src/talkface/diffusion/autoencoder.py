"""Small convolutional autoencoder between 3x32x32 frames and 4x8x8 latents.
Fitted once on the synthetic frames and frozen afterwards."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn


@dataclass(frozen=True)
class AutoencoderConfig:
    image_channels: int = 3
    latent_channels: int = 4
    hidden: int = 32
    steps: int = 1500
    batch_size: int = 16
    lr: float = 2e-3

    def to_dict(self) -> dict:
        return asdict(self)


class ToyAutoencoder(nn.Module):
    def __init__(self, cfg: AutoencoderConfig = AutoencoderConfig()):
        super().__init__()
        self.cfg = cfg
        c, h, z = cfg.image_channels, cfg.hidden, cfg.latent_channels
        self.enc = nn.Sequential(
            nn.Conv2d(c, h, 3, padding=1), nn.SiLU(),
            nn.Conv2d(h, h, 4, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(h, h, 4, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(h, z, 3, padding=1),
        )
        self.dec = nn.Sequential(
            nn.Conv2d(z, h, 3, padding=1), nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(h, h, 3, padding=1), nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(h, h, 3, padding=1), nn.SiLU(),
            nn.Conv2d(h, c, 3, padding=1),
        )
        # latents are multiplied by this so they have roughly unit variance
        self.register_buffer("scale", torch.ones(()))
        self.register_buffer("shift", torch.zeros(()))

    def encode(self, frames: Tensor) -> Tensor:
        lead = frames.shape[:-3]
        z = self.enc(frames.reshape(-1, *frames.shape[-3:]))
        z = (z - self.shift) * self.scale
        return z.reshape(*lead, *z.shape[1:])

    def decode(self, latents: Tensor) -> Tensor:
        lead = latents.shape[:-3]
        z = latents.reshape(-1, *latents.shape[-3:]) / self.scale + self.shift
        x = self.dec(z)
        return x.reshape(*lead, *x.shape[1:])

    def forward(self, frames: Tensor) -> Tensor:
        return self.decode(self.encode(frames))


def fit_autoencoder(frames: Tensor, cfg: AutoencoderConfig = AutoencoderConfig(), seed: int = 0,
                    log=None) -> ToyAutoencoder:
    """Fit on a [N, 3, H, W] frame bank, then set the latent normalization and freeze."""
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    ae = ToyAutoencoder(cfg)
    opt = torch.optim.Adam(ae.parameters(), lr=cfg.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, cfg.steps)
    n = frames.shape[0]
    for step in range(cfg.steps):
        idx = torch.randint(0, n, (min(cfg.batch_size, n),), generator=gen)
        loss = F.mse_loss(ae(frames[idx]), frames[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        if log is not None and (step % 250 == 0 or step == cfg.steps - 1):
            log(step, float(loss.detach()))
    with torch.no_grad():
        z = ae.enc(frames)
        ae.shift.fill_(float(z.mean()))
        ae.scale.fill_(float(1.0 / z.std().clamp_min(1e-6)))
    ae.requires_grad_(False)
    return ae.eval()

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class DiffusionSchedule:
    """Linear-beta schedule. ``alphas_bar`` has T+1 entries with alphas_bar[0] == 1,
    so noising at t=0 is the identity."""

    betas: Tensor  # [T], float64
    alphas_bar: Tensor  # [T + 1], float64

    @property
    def T(self) -> int:
        return self.betas.shape[0]

    def alpha_bar(self, t, like: Tensor) -> Tensor:
        """alphas_bar[t] shaped to broadcast against ``like`` (batch-first)."""
        t = torch.as_tensor(t, dtype=torch.long)
        a = self.alphas_bar[t].to(like.dtype)
        if a.dim() == 0:
            return a
        return a.reshape(-1, *([1] * (like.dim() - 1)))


def make_schedule(T: int = 100, beta_start: float = 1e-3, beta_end: float = 0.1) -> DiffusionSchedule:
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start < 1.0 or not 0.0 < beta_end < 1.0:
        raise ScheduleError("betas must lie in (0, 1)")
    if T > 1 and not beta_start < beta_end:
        raise ScheduleError(f"beta_start ({beta_start}) must be below beta_end ({beta_end})")
    betas = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    alphas_bar = torch.cat([torch.ones(1, dtype=torch.float64), torch.cumprod(1.0 - betas, dim=0)])
    return DiffusionSchedule(betas, alphas_bar)


def add_noise(x0: Tensor, t, eps: Tensor, schedule: DiffusionSchedule) -> Tensor:
    if x0.shape != eps.shape:
        raise ScheduleError(f"noise shape {tuple(eps.shape)} does not match x0 {tuple(x0.shape)}")
    t_arr = torch.as_tensor(t)
    if torch.any(t_arr < 0) or torch.any(t_arr > schedule.T):
        raise ScheduleError(f"timestep {t} outside [0, {schedule.T}]")
    a = schedule.alpha_bar(t_arr, x0)
    return torch.sqrt(a) * x0 + torch.sqrt(1.0 - a) * eps


def predict_x0(x_t: Tensor, t, eps: Tensor, schedule: DiffusionSchedule) -> Tensor:
    a = schedule.alpha_bar(t, x_t)
    return (x_t - torch.sqrt(1.0 - a) * eps) / torch.sqrt(a)

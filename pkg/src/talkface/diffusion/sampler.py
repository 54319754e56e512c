from __future__ import annotations

from typing import Callable

import torch
from torch import Tensor

from .schedule import DiffusionSchedule, ScheduleError

EpsModel = Callable[[Tensor, Tensor, object], Tensor]


def ddim_timesteps(T: int, steps: int, t_start: int | None = None) -> list[int]:
    """Descending, evenly spaced timesteps from ``t_start`` (default T) to 1."""
    t_start = T if t_start is None else t_start
    if steps < 1:
        raise ScheduleError(f"steps must be >= 1, got {steps}")
    if steps > t_start:
        raise ScheduleError(f"{steps} sampling steps exceed the {t_start} available timesteps")
    ts = torch.linspace(t_start, 1, steps, dtype=torch.float64).round().long().tolist()
    return list(dict.fromkeys(ts))


@torch.no_grad()
def ddim_sample(model: EpsModel, shape, cond, schedule: DiffusionSchedule, steps: int = 40,
                seed: int = 0, x_T: Tensor | None = None, t_start: int | None = None,
                dtype=torch.float32) -> Tensor:
    """Deterministic (eta = 0) DDIM. Starts from seeded N(0, I) unless ``x_T`` is given."""
    if steps > schedule.T:
        raise ScheduleError(f"steps ({steps}) must not exceed T ({schedule.T})")
    if x_T is None:
        gen = torch.Generator().manual_seed(int(seed))
        x = torch.randn(tuple(shape), generator=gen, dtype=dtype)
    else:
        x = x_T
    ts = ddim_timesteps(schedule.T, steps, t_start)
    batch = x.shape[0]
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        eps = model(x, torch.full((batch,), t, dtype=torch.long), cond)
        a_t = schedule.alphas_bar[t].to(x.dtype)
        a_prev = schedule.alphas_bar[t_prev].to(x.dtype)
        x0 = (x - torch.sqrt(1.0 - a_t) * eps) / torch.sqrt(a_t)
        x = torch.sqrt(a_prev) * x0 + torch.sqrt(1.0 - a_prev) * eps
    return x

"""Central finite-difference gradient checks used by the test suite."""

from __future__ import annotations

from typing import Callable

import torch
from torch import Tensor


def finite_difference_check(fn: Callable[[Tensor], Tensor], x: Tensor, n_coords: int = 10,
                            h: float = 1e-5, seed: int = 0, floor: float = 1e-6) -> list[dict]:
    """Compare autograd against central differences of ``fn(x).sum()`` at
    ``n_coords`` random coordinates of ``x`` (float64 recommended).

    Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
    """
    x = x.detach().clone().requires_grad_(True)
    fn(x).sum().backward()
    analytic = x.grad.detach().reshape(-1)
    gen = torch.Generator().manual_seed(seed)
    coords = torch.randperm(x.numel(), generator=gen)[:n_coords].tolist()
    rows = []
    with torch.no_grad():
        flat = x.detach().clone().reshape(-1)
        for i in coords:
            orig = flat[i].item()
            flat[i] = orig + h
            up = fn(flat.reshape(x.shape)).sum().item()
            flat[i] = orig - h
            down = fn(flat.reshape(x.shape)).sum().item()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            a = analytic[i].item()
            rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            rows.append({"index": i, "analytic": a, "numeric": numeric, "rel_error": rel})
    return rows


def max_rel_error(rows: list[dict]) -> float:
    return max(r["rel_error"] for r in rows)

"""Exact 1.5-entmax: a sparse map onto the probability simplex.

entmax15(z) = [z/2 - tau]_+^2 with tau chosen so the result sums to one. The
threshold is found exactly by sorting, so entries below it come out as true
zeros rather than small positives.
"""

from __future__ import annotations

import torch


def _threshold(z: torch.Tensor, dim: int) -> torch.Tensor:
    z_sorted, _ = torch.sort(z, dim=dim, descending=True)
    n = z.shape[dim]
    shape = [1] * z.dim()
    shape[dim] = n
    rho = torch.arange(1, n + 1, dtype=z.dtype, device=z.device).view(shape)

    mean = z_sorted.cumsum(dim) / rho
    mean_sq = (z_sorted**2).cumsum(dim) / rho
    ss = rho * (mean_sq - mean**2)
    delta = torch.clamp((1 - ss) / rho, min=0)
    tau = mean - torch.sqrt(delta)

    support = (tau <= z_sorted).sum(dim=dim, keepdim=True)
    return tau.gather(dim, support - 1)


class Entmax15Function(torch.autograd.Function):
    @staticmethod
    def forward(ctx, z, dim):
        ctx.dim = dim
        z = z / 2
        z = z - z.amax(dim=dim, keepdim=True)
        p = torch.clamp(z - _threshold(z, dim), min=0) ** 2
        p = p / p.sum(dim=dim, keepdim=True)  # absorb rounding in tau
        ctx.save_for_backward(p)
        return p

    @staticmethod
    def backward(ctx, grad_out):
        (p,) = ctx.saved_tensors
        s = p.sqrt()  # zero off the support
        g = grad_out * s
        q = g.sum(ctx.dim, keepdim=True) / s.sum(ctx.dim, keepdim=True)
        return g - q * s, None


def entmax15(z: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return Entmax15Function.apply(z, dim)

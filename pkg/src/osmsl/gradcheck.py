"""Finite-difference verification of backpropagated gradients.

Central differences in float64: with step eps, truncation error is O(eps^2)
and roundoff is O(machine_eps / eps), so eps around 1e-5 leaves both far
below the tolerances used by callers.  Relative error compares against the
larger magnitude with an absolute floor, so near-zero gradient pairs do not
blow up the ratio.

Loss evaluations restore module buffers afterwards (batch-norm running
statistics mutate during train-mode forwards), keeping repeated evaluations
at the same parameters identical.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable

import torch
from torch import nn


@contextmanager
def preserved_buffers(module: nn.Module):
    """Snapshot all registered buffers and restore them on exit."""
    saved = [(buf, buf.detach().clone()) for _, buf in module.named_buffers()]
    try:
        yield
    finally:
        with torch.no_grad():
            for buf, snapshot in saved:
                buf.copy_(snapshot)


def analytic_gradients(
    model: nn.Module, loss_fn: Callable[[], torch.Tensor]
) -> dict[str, torch.Tensor]:
    """Backprop gradients per named parameter; absent grads count as zero."""
    with preserved_buffers(model):
        model.zero_grad(set_to_none=True)
        loss_fn().backward()
        grads = {
            name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
            for name, p in model.named_parameters()
        }
        model.zero_grad(set_to_none=True)
    return grads


def finite_difference_gradients(
    model: nn.Module, loss_fn: Callable[[], torch.Tensor], eps: float = 1e-5
) -> dict[str, torch.Tensor]:
    """Central-difference gradient of loss_fn for every model parameter."""

    def value() -> float:
        with torch.no_grad():
            return float(loss_fn())

    grads = {}
    with preserved_buffers(model):
        for name, p in model.named_parameters():
            flat = p.detach().view(-1)
            g = torch.zeros(flat.numel(), dtype=p.dtype)
            for i in range(flat.numel()):
                orig = float(flat[i])
                with torch.no_grad():
                    flat[i] = orig + eps
                f_plus = value()
                with torch.no_grad():
                    flat[i] = orig - eps
                f_minus = value()
                with torch.no_grad():
                    flat[i] = orig
                g[i] = (f_plus - f_minus) / (2.0 * eps)
            grads[name] = g.view(p.shape)
    return grads


def max_relative_error(
    analytic: dict[str, torch.Tensor],
    numeric: dict[str, torch.Tensor],
    floor: float = 1e-6,
) -> float:
    """max over elements of |a - n| / max(|a|, |n|, floor)."""
    if set(analytic) != set(numeric):
        raise ValueError("gradient dicts cover different parameters")
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = torch.clamp(torch.maximum(a.abs(), n.abs()), min=floor)
        worst = max(worst, float(((a - n).abs() / denom).max()))
    return worst


def check_gradients(
    model: nn.Module,
    loss_fn: Callable[[], torch.Tensor],
    eps: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Worst relative disagreement between backprop and central differences."""
    analytic = analytic_gradients(model, loss_fn)
    numeric = finite_difference_gradients(model, loss_fn, eps=eps)
    return max_relative_error(analytic, numeric, floor=floor)

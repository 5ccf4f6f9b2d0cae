"""Reverse-mode gradients on top of torch autograd."""
from __future__ import annotations

from typing import Mapping

import torch
from torch import nn

from ..errors import NumericError


def named_params(params) -> dict[str, torch.Tensor]:
    if isinstance(params, nn.Module):
        return dict(params.named_parameters())
    if isinstance(params, Mapping):
        return dict(params)
    return {str(i): p for i, p in enumerate(params)}


def backward(loss: torch.Tensor, params, inputs: Mapping[str, torch.Tensor] | None = None
             ) -> dict[str, torch.Tensor]:
    """Gradients of a scalar ``loss`` w.r.t. ``params`` (and optional ``inputs``).

    Parameters the loss does not depend on get an exact zero gradient. A
    non-finite gradient raises :class:`NumericError` naming every offending
    tensor.
    """
    if loss.numel() != 1:
        raise ValueError("backward needs a scalar loss")
    targets = named_params(params)
    if inputs:
        targets.update({f"input:{k}": v for k, v in inputs.items()})
    names = list(targets)
    grads = torch.autograd.grad(loss, [targets[n] for n in names], allow_unused=True)
    out = {}
    bad = []
    for name, g in zip(names, grads):
        g = torch.zeros_like(targets[name]) if g is None else g
        if not torch.all(torch.isfinite(g)):
            bad.append(name)
        out[name] = g
    if bad:
        raise NumericError("non-finite gradient in: " + ", ".join(bad))
    return out

"""Finite-difference verification of every differentiable primitive.

Each case builds a tiny double-precision instance of one primitive, reduces its
output to a scalar with fixed random weights, and compares the reverse-mode
gradient from :func:`backward` against central differences.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch

from ..features.upsample import MelUpsampler
from ..flow.layers import DSConv1d, FlowBlock, Inv1x1, gated_activation, squeeze
from ..flow.model import FlowConfig, FlowModel, nll
from .grad import backward

FD_STEP = 1e-5
GRAD_FLOOR = 1e-8
TOLERANCE = 1e-4
LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


@dataclass
class CheckResult:
    name: str
    n_entries: int
    max_rel_err: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < TOLERANCE


def _rel_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    keep = scale > GRAD_FLOOR
    return np.abs(analytic - numeric)[keep] / scale[keep]


def check_case(name: str, loss_fn: Callable[[], torch.Tensor], tensors: dict,
               corrupt: bool = False, step: float = FD_STEP) -> CheckResult:
    """Compare analytic and central-difference gradients for every entry of ``tensors``."""
    grads = backward(loss_fn(), tensors)
    worst, count = 0.0, 0
    for key, t in tensors.items():
        analytic = grads[key].detach().numpy().copy()
        if corrupt:
            analytic *= 1.01
        numeric = np.zeros_like(analytic)
        with torch.no_grad():
            for idx in np.ndindex(*t.shape):
                orig = float(t[idx])
                t[idx] = orig + step
                up = float(loss_fn())
                t[idx] = orig - step
                down = float(loss_fn())
                t[idx] = orig
                numeric[idx] = (up - down) / (2 * step)
        err = _rel_errors(analytic, numeric)
        count += err.size
        if err.size:
            worst = max(worst, float(err.max()))
    return CheckResult(name, count, worst)


def _randomize(module, gen, scale=0.3):
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(scale * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return module


def _weights(gen, shape):
    return torch.randn(shape, generator=gen, dtype=torch.float64)


def _case_dsconv(gen):
    conv = _randomize(DSConv1d(3, 4, 3, dilation=2).double(), gen)
    x = torch.randn(1, 3, 10, generator=gen, dtype=torch.float64, requires_grad=True)
    w = _weights(gen, (1, 4, 10))
    tensors = dict(conv.named_parameters()) | {"x": x}
    return lambda: (w * conv(x)).sum(), tensors


def _case_gated(gen):
    a = torch.randn(2, 5, 7, generator=gen, dtype=torch.float64, requires_grad=True)
    b = torch.randn(2, 5, 7, generator=gen, dtype=torch.float64, requires_grad=True)
    w = _weights(gen, (2, 5, 7))
    return lambda: (w * gated_activation(a, b)).sum(), {"a": a, "b": b}


def _case_coupling(gen):
    torch.manual_seed(int(torch.randint(0, 2**31, (1,), generator=gen)))
    block = _randomize(FlowBlock(4, 3, "double", hidden=6, n_layers=2).double(), gen, 0.2)
    x = torch.randn(1, 4, 12, generator=gen, dtype=torch.float64, requires_grad=True)
    cond = torch.randn(1, 3, 12, generator=gen, dtype=torch.float64, requires_grad=True)
    w = _weights(gen, (1, 4, 12))
    tensors = {k: v for k, v in block.named_parameters() if not k.startswith("inv1x1")}
    tensors |= {"x": x, "cond": cond}

    def loss():
        y, logdet = block.coupling_forward(x, cond)
        return (w * y).sum() + logdet.sum()

    return loss, tensors


def _case_inv1x1(gen):
    torch.manual_seed(int(torch.randint(0, 2**31, (1,), generator=gen)))
    layer = Inv1x1(5).double()
    with torch.no_grad():
        layer.weight.add_(0.3 * torch.randn(5, 5, generator=gen, dtype=torch.float64))
    x = torch.randn(2, 5, 6, generator=gen, dtype=torch.float64, requires_grad=True)
    w = _weights(gen, (2, 5, 6))

    def loss():
        y, logdet = layer(x)
        return (w * y).sum() + logdet.sum()

    return loss, {"weight": layer.weight, "x": x}


def _case_squeeze(gen):
    x = torch.randn(2, 24, generator=gen, dtype=torch.float64, requires_grad=True)
    w = _weights(gen, (2, 4, 6))
    return lambda: (w * squeeze(x, 4)).sum(), {"x": x}


def _case_nll(gen):
    z = torch.randn(2, 4, 8, generator=gen, dtype=torch.float64, requires_grad=True)
    logdet = torch.randn(2, generator=gen, dtype=torch.float64, requires_grad=True)
    return lambda: nll(z, logdet, 0.9), {"z": z, "logdet": logdet}


def _case_upsampler(gen):
    up = MelUpsampler(3, hop=4, fft_size=16).double()
    _randomize(up, gen)
    mel = torch.rand(1, 3, 5, generator=gen, dtype=torch.float64, requires_grad=True)
    w = _weights(gen, (1, 3, 22))
    tensors = dict(up.named_parameters()) | {"mel": mel}
    return lambda: (w * up(mel, 22)).sum(), tensors


def tiny_model(seed: int = 0, n_blocks: int = 1, cond_kind: str = "time") -> FlowModel:
    cfg = FlowConfig(n_blocks=n_blocks, g=4, hidden=6, n_layers=2, cond_channels=3,
                     cond_kind=cond_kind)
    return FlowModel.build(cfg, seed=seed, dtype=torch.float64)


def data_term(z: torch.Tensor, logdet: torch.Tensor) -> torch.Tensor:
    """The unit-sigma nll minus its constant log(sqrt(2 pi)).

    Same gradient as :func:`nll`, but without the constant the loss value is ~0.1
    instead of ~1, so a central difference rounds at a finer ulp. At step 1e-5 one
    ulp of a unit-size loss is already ~1e-3 relative on a gradient of 1e-8.
    """
    return ((z**2).sum() / 2 - logdet.sum()) / z.numel()


def _case_end_to_end(gen, n_blocks=1, cond_kind="time", cond_gain=1.0):
    model = tiny_model(int(torch.randint(0, 2**31, (1,), generator=gen)), n_blocks, cond_kind)
    # perturb away from the zero-initialized output layer so every weight matters
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.1 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    x = 0.2 * torch.randn(1, 32, generator=gen, dtype=torch.float64)
    noisy = x + 0.3 * torch.randn(1, 32, generator=gen, dtype=torch.float64)
    feats = model.featurize(cond_gain * noisy.numpy())

    def loss():
        z, logdet = model(x, feats)
        return data_term(z, logdet)

    with torch.no_grad():
        z, logdet = model(x, feats)
        full = float(nll(z, logdet, 1.0))
    if abs(float(data_term(z, logdet)) + LOG_SQRT_2PI - full) > 1e-12:
        raise AssertionError("constant-free loss disagrees with nll")
    return loss, dict(model.named_parameters())


CASES = {
    "dsconv": _case_dsconv,
    "gated_activation": _case_gated,
    "affine_coupling": _case_coupling,
    "inv1x1": _case_inv1x1,
    "squeeze": _case_squeeze,
    "nll": _case_nll,
    "mel_upsampler": _case_upsampler,
    "end_to_end_nll": _case_end_to_end,
}

# slower cases, skipped by the tiny run
FULL_CASES = {
    "end_to_end_nll_2blocks": lambda gen: _case_end_to_end(gen, n_blocks=2),
    # filterbank outputs of a 32-sample input are still ringing up; a louder input
    # keeps the conditional gradients well above finite-difference round-off
    "end_to_end_nll_apg": lambda gen: _case_end_to_end(gen, cond_kind="apg", cond_gain=20.0),
}


def run_gradcheck(seed: int = 0, corrupt: Optional[str] = None,
                  cases: Optional[list[str]] = None, tiny: bool = True) -> list[CheckResult]:
    """Run every case (or the named subset); ``corrupt`` names a case whose analytic
    gradient is deliberately scaled by 1.01, as a negative control."""
    available = CASES if tiny else CASES | FULL_CASES
    if corrupt is not None and corrupt not in available:
        raise KeyError(f"unknown gradcheck case {corrupt!r}")
    results = []
    for name in cases or list(available):
        gen = torch.Generator().manual_seed(seed + sum(map(ord, name)))
        with torch.random.fork_rng(devices=[]):
            loss_fn, tensors = available[name](gen)
            results.append(check_case(name, loss_fn, tensors, corrupt=(name == corrupt)))
    return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'primitive':<{width}}  {'entries':>7}  {'max rel err':>11}  status"]
    for r in results:
        err = f"{r.max_rel_err:.2e}" if math.isfinite(r.max_rel_err) else "nan"
        lines.append(f"{r.name:<{width}}  {r.n_entries:>7}  {err:>11}  "
                     f"{'ok' if r.ok else 'FAIL'}")
    return "\n".join(lines)

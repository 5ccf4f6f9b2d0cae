"""Maximum-likelihood training loop and enhancement."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from ..audio import (Waveform, center_crop, chunk_random, mix_at_snr, pad_to_multiple,
                     read_manifest, read_wav, trim)
from ..errors import NumericError, SampleRateError, ShapeError
from ..flow.checkpoint import load_checkpoint, save_checkpoint
from ..flow.model import FlowConfig, FlowModel, nll
from .grad import backward
from .optim import OptimState, SchedulerState, adam_step, scheduler_update

log = logging.getLogger(__name__)

CSV_HEADER = ["epoch", "train_nll", "val_nll", "lr"]


@dataclass
class TrainConfig:
    train_manifest: str = ""
    val_manifest: str = ""
    out_dir: str = "run"
    epochs: int = 200
    batch_size: int = 4
    chunk_s: float = 1.0
    sigma_train: float = 1.0
    sigma_infer: float = 0.9
    lr: float = 1e-3
    lr_decay: float = 0.5
    patience: int = 10
    seed: int = 0
    model: FlowConfig = field(default_factory=FlowConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = FlowConfig(**self.model)
        for name in ("epochs", "batch_size", "chunk_s", "sigma_train", "sigma_infer", "lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.sigma_infer > self.sigma_train:
            raise ValueError("sigma_infer must not exceed sigma_train")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    checkpoint: Path
    loss_csv: Path
    history: list = field(default_factory=list)  # rows of (epoch, train_nll, val_nll, lr)


def load_pairs(manifest, sample_rate: int) -> list[tuple[Waveform, Waveform]]:
    """Read a manifest into ``(clean, mixture)`` pairs mixed at the listed SNR."""
    pairs = []
    for item in read_manifest(manifest):
        clean, noise = read_wav(item.clean_path), read_wav(item.noise_path)
        for w, p in ((clean, item.clean_path), (noise, item.noise_path)):
            if w.sample_rate != sample_rate:
                raise SampleRateError(f"{p}: {w.sample_rate} Hz, model expects {sample_rate} Hz")
        if len(noise) < len(clean):
            raise ShapeError(f"{item.noise_path}: noise shorter than clean signal")
        noise = noise.with_samples(noise.samples[: len(clean)])
        mixture, _ = mix_at_snr(clean, noise, item.snr_db)
        pairs.append((clean, mixture))
    return pairs


def _stack(waves, g):
    padded = [pad_to_multiple(w, g)[0].samples for w in waves]
    return np.stack(padded)


def _item_seed(*keys) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def evaluate_nll(model: FlowModel, batches, sigma: float = 1.0) -> float:
    """Mean NLL over precomputed ``(x, feats)`` batches, weighted by batch size."""
    total, count = 0.0, 0
    with torch.no_grad():
        for x, feats in batches:
            z, logdet = model(x, feats)
            total += float(nll(z, logdet, sigma)) * x.shape[0]
            count += x.shape[0]
    return total / count


def _fixed_batches(model, pairs, chunk_s, batch_size):
    g = model.g
    out = []
    for i in range(0, len(pairs), batch_size):
        group = pairs[i:i + batch_size]
        x = _stack([center_crop(c, chunk_s) for c, _ in group], g)
        y = _stack([center_crop(m, chunk_s) for _, m in group], g)
        out.append((torch.as_tensor(x, dtype=model.dtype), model.featurize(y)))
    return out


def _write_csv(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for epoch, tr, va, lr in history:
            writer.writerow([epoch, repr(tr), repr(va), repr(lr)])


def train(cfg: TrainConfig, model: Optional[FlowModel] = None) -> TrainResult:
    """Train by minimizing the conditional NLL.

    Epoch 0 of the history is an evaluation of the freshly initialized model
    (no updates). Every later epoch shuffles the items, draws one random chunk
    per item and steps Adam once per batch; validation NLL is measured on
    fixed center crops at sigma = 1.
    """
    out = Path(cfg.out_dir)
    mcfg = cfg.model
    train_pairs = load_pairs(cfg.train_manifest, mcfg.sample_rate)
    val_pairs = load_pairs(cfg.val_manifest, mcfg.sample_rate)
    if not train_pairs or not val_pairs:
        raise ValueError("training and validation manifests must be non-empty")
    out.mkdir(parents=True, exist_ok=True)

    if model is None:
        model = FlowModel.build(mcfg, seed=cfg.seed)
    params = dict(model.named_parameters())
    opt = OptimState(lr=cfg.lr)
    sched = SchedulerState(factor=cfg.lr_decay, patience=cfg.patience)
    best_path, csv_path = out / "best.ckpt", out / "loss.csv"

    val_batches = _fixed_batches(model, val_pairs, cfg.chunk_s, cfg.batch_size)
    train_eval = _fixed_batches(model, train_pairs, cfg.chunk_s, cfg.batch_size)
    val0 = evaluate_nll(model, val_batches, 1.0)
    history = [(0, evaluate_nll(model, train_eval, cfg.sigma_train), val0, opt.lr)]
    scheduler_update(sched, val0, opt.lr)
    save_checkpoint(best_path, model, {"epoch": 0, "val_nll": val0})
    best = val0
    log.info("epoch 0: val nll %.5f", val0)

    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng(_item_seed(cfg.seed, epoch)).permutation(len(train_pairs))
        losses = []
        for b in range(0, len(order), cfg.batch_size):
            idx = order[b:b + cfg.batch_size]
            seeds = [_item_seed(cfg.seed, epoch, int(i)) for i in idx]
            x = _stack([chunk_random(train_pairs[i][0], cfg.chunk_s, s) for i, s in zip(idx, seeds)],
                       model.g)
            y = _stack([chunk_random(train_pairs[i][1], cfg.chunk_s, s) for i, s in zip(idx, seeds)],
                       model.g)
            z, logdet = model(torch.as_tensor(x, dtype=model.dtype), model.featurize(y))
            loss = nll(z, logdet, cfg.sigma_train)
            if not torch.isfinite(loss):
                save_checkpoint(out / "diverged.ckpt", model, {"epoch": epoch})
                raise NumericError(f"loss became {float(loss.detach())} at epoch {epoch}; "
                                   f"diagnostic checkpoint written to {out / 'diverged.ckpt'}")
            grads = backward(loss, params)
            adam_step(opt, params, grads)
            losses.append(float(loss.detach()))

        val = evaluate_nll(model, val_batches, 1.0)
        opt.lr = scheduler_update(sched, val, opt.lr)
        history.append((epoch, float(np.mean(losses)), val, opt.lr))
        if val < best:
            best = val
            save_checkpoint(best_path, model, {"epoch": epoch, "val_nll": val})
        log.info("epoch %d: train %.5f val %.5f lr %.2e", epoch, history[-1][1], val, opt.lr)
        _write_csv(csv_path, history)

    _write_csv(csv_path, history)
    save_checkpoint(out / "last.ckpt", model, {"epoch": cfg.epochs, "val_nll": history[-1][2]})
    return TrainResult(best_path, csv_path, history)


def enhance(checkpoint, noisy: Waveform, sigma: float = 0.9, seed: int = 0) -> Waveform:
    """Sample ``z ~ N(0, sigma^2 I)`` and invert the flow conditioned on ``noisy``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    model = checkpoint if isinstance(checkpoint, FlowModel) else load_checkpoint(checkpoint)[0]
    if noisy.sample_rate != model.cfg.sample_rate:
        raise SampleRateError(
            f"model expects {model.cfg.sample_rate} Hz, input is {noisy.sample_rate} Hz")
    padded, pad_len = pad_to_multiple(noisy, model.g)
    frames = len(padded) // model.g
    rng = np.random.default_rng(seed)
    z = sigma * rng.standard_normal((1, model.g, frames))
    with torch.no_grad():
        x = model.inverse(torch.as_tensor(z, dtype=model.dtype), model.featurize(padded.samples))
    out = x[0].double().numpy()
    if not np.all(np.isfinite(out)):
        raise NumericError("enhanced signal is not finite")
    return trim(Waveform(out, noisy.sample_rate), pad_len)

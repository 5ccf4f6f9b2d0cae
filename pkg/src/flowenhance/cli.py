"""Command-line entry points: train, enhance, featurize, prepare-stimuli, gradcheck.

Every command resolves its settings as defaults < ``--config`` file < flags,
prints the effective settings as JSON and saves them as ``run_config.json``
under ``--out``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from .errors import FlowEnhanceError

log = logging.getLogger("flowenhance")

RUN_CONFIG = "run_config.json"


class UsageError(Exception):
    pass


def _flag_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (type, default); None defaults mean "required"
SETTINGS = {
    "train": {
        "manifest": (str, None), "val_manifest": (str, None), "out": (str, None),
        "cond": (str, "time"), "blocks": (int, 16), "g": (int, 12), "mode": (str, "double"),
        "hidden": (int, 128), "layers": (int, 8), "kernel_size": (int, 3),
        "cond_channels": (int, 16), "epochs": (int, 200), "batch_size": (int, 4),
        "chunk_s": (float, 1.0), "lr": (float, 1e-3), "lr_decay": (float, 0.5),
        "patience": (int, 10), "sigma_train": (float, 1.0), "sigma_infer": (float, 0.9),
        "seed": (int, 0), "dry_run": (_flag_bool, False),
    },
    "enhance": {
        "ckpt": (str, None), "in": (str, None), "out": (str, None), "sigma": (float, 0.9),
        "seed": (int, 0), "ref": (str, ""),
    },
    "featurize": {
        "kind": (str, None), "in": (str, None), "out": (str, None),
        "dump_design": (_flag_bool, False), "log_features": (_flag_bool, False),
    },
    "prepare-stimuli": {
        "item": (str, None), "out": (str, None), "target_lufs": (float, -23.0),
    },
    "gradcheck": {
        "tiny": (_flag_bool, False), "seed": (int, 0), "out": (str, ""), "corrupt": (str, ""),
    },
}

CHOICES = {"cond": ("time", "mel", "apg"), "mode": ("single", "double"), "kind": ("mel", "apg")}


def read_config_file(path, command: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are rejected."""
    spec = SETTINGS[command]
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for num, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{num}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in spec:
            raise UsageError(f"{path}:{num}: unknown key {key!r} for {command}")
        out[key] = value
    return out


def resolve(command: str, args: argparse.Namespace) -> dict:
    spec = SETTINGS[command]
    raw = {k: d for k, (_, d) in spec.items()}
    if args.config:
        raw.update(read_config_file(args.config, command))
    for key in spec:
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = val
    cfg = {}
    for key, (typ, _) in spec.items():
        val = raw[key]
        if val is None:
            raise UsageError(f"{command}: missing required setting --{key.replace('_', '-')}")
        try:
            cfg[key] = typ(val)
        except ValueError as exc:
            raise UsageError(f"{command}: bad value for {key}: {exc}") from exc
        if key in CHOICES and cfg[key] not in CHOICES[key]:
            raise UsageError(f"{command}: {key} must be one of {CHOICES[key]}, got {cfg[key]!r}")
    return cfg


def _echo_and_save(cfg: dict, out_dir, extra: dict | None = None) -> None:
    record = dict(cfg, **(extra or {}))
    text = json.dumps(record, indent=2, sort_keys=True)
    print(text)
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / RUN_CONFIG).write_text(text + "\n")


def _wav_inputs(path) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.wav"))
        if not files:
            raise FileNotFoundError(f"{p}: no .wav files")
        return files
    if not p.is_file():
        raise FileNotFoundError(f"{p}: no such file or directory")
    return [p]


def cmd_train(cfg: dict) -> int:
    from .audio import read_manifest
    from .flow.model import FlowConfig, FlowModel, count_parameters
    from .training.loop import TrainConfig, train

    model_cfg = FlowConfig(n_blocks=cfg["blocks"], g=cfg["g"], mode=cfg["mode"],
                           cond_kind=cfg["cond"], hidden=cfg["hidden"], n_layers=cfg["layers"],
                           kernel_size=cfg["kernel_size"], cond_channels=cfg["cond_channels"])
    tcfg = TrainConfig(train_manifest=cfg["manifest"], val_manifest=cfg["val_manifest"],
                       out_dir=cfg["out"], epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                       chunk_s=cfg["chunk_s"], sigma_train=cfg["sigma_train"],
                       sigma_infer=cfg["sigma_infer"], lr=cfg["lr"], lr_decay=cfg["lr_decay"],
                       patience=cfg["patience"], seed=cfg["seed"], model=model_cfg)
    if not cfg["dry_run"]:
        # fail before anything is written if a manifest is missing or malformed
        for m in (cfg["manifest"], cfg["val_manifest"]):
            if not Path(m).is_file():
                raise FileNotFoundError(f"manifest not found: {m}")
            read_manifest(m)
    n_params = count_parameters(FlowModel.build(model_cfg, seed=cfg["seed"]))
    _echo_and_save(cfg, cfg["out"], {"parameters": n_params})
    if cfg["dry_run"]:
        return 0
    result = train(tcfg)
    print(f"best checkpoint: {result.checkpoint}")
    print(f"loss curve: {result.loss_csv}")
    return 0


def cmd_enhance(cfg: dict) -> int:
    from .audio import read_wav, write_wav
    from .flow.checkpoint import load_checkpoint
    from .training.loop import enhance
    from .training.metrics import si_sdr

    model, _ = load_checkpoint(cfg["ckpt"])
    inputs = _wav_inputs(cfg["in"])
    ref_dir = Path(cfg["ref"]) if cfg["ref"] else None
    if ref_dir is not None and not ref_dir.is_dir():
        raise FileNotFoundError(f"reference directory not found: {ref_dir}")
    _echo_and_save(cfg, cfg["out"])
    out = Path(cfg["out"])
    rows = []
    for path in inputs:
        noisy = read_wav(path)
        enhanced = enhance(model, noisy, sigma=cfg["sigma"], seed=cfg["seed"])
        write_wav(out / path.name, enhanced, "float32")
        if ref_dir is not None:
            ref = read_wav(ref_dir / path.name)
            rows.append((path.name, si_sdr(noisy, ref), si_sdr(enhanced, ref)))
    if rows:
        with open(out / "si_sdr.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["file", "si_sdr_noisy", "si_sdr_enhanced"])
            for name, a, b in rows:
                writer.writerow([name, f"{a:.4f}", f"{b:.4f}"])
                print(f"{name}: noisy {a:.2f} dB -> enhanced {b:.2f} dB")
    print(f"enhanced {len(inputs)} file(s) into {out}")
    return 0


def cmd_featurize(cfg: dict) -> int:
    from .audio import read_wav
    from .features.apg import ApgConfig, apg_analyze, design_apg, design_table
    from .features.featuremap import write_feature_dump
    from .features.mel import MelConfig, mel_spectrogram

    inputs = _wav_inputs(cfg["in"])
    waves = [(p, read_wav(p)) for p in inputs]
    _echo_and_save(cfg, cfg["out"])
    out = Path(cfg["out"])
    designs = {}
    for path, w in waves:
        if cfg["kind"] == "mel":
            fm = mel_spectrogram(MelConfig(), w)
        else:
            if w.sample_rate not in designs:
                designs[w.sample_rate] = design_apg(ApgConfig(log_features=cfg["log_features"]),
                                                    w.sample_rate)
            fm = apg_analyze(designs[w.sample_rate], w)
        write_feature_dump(out / f"{path.stem}.fdfm", fm)
        print(f"{path.name}: {fm.data.shape[0]} x {fm.data.shape[1]} @ {fm.frame_rate:g} Hz")
    if cfg["kind"] == "apg" and cfg["dump_design"]:
        for rate, fb in designs.items():
            name = "apg_design.csv" if len(designs) == 1 else f"apg_design_{rate}.csv"
            rows = design_table(fb)
            with open(out / name, "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
                writer.writeheader()
                writer.writerows(rows)
    return 0


def cmd_prepare_stimuli(cfg: dict) -> int:
    from .loudness.stimuli import load_item, prepare_stimuli, write_stimulus_set

    item = Path(cfg["item"])
    mixture, clean, systems = load_item(item)
    if not systems:
        raise FileNotFoundError(f"{item}: no sys_*.wav files")
    _echo_and_save(cfg, cfg["out"])
    stim = prepare_stimuli(mixture, clean, systems, item_id=item.name,
                           target_lufs=cfg["target_lufs"])
    report = write_stimulus_set(stim, cfg["out"])
    for name, gain in stim.applied_gains_db.items():
        print(f"{name}: background gain {gain:+.2f} dB")
    for flag in stim.report["flags"]:
        print(f"flag: {flag}")
    print(f"report: {report}")
    return 0


def cmd_gradcheck(cfg: dict) -> int:
    from .training.gradcheck import TOLERANCE, format_table, run_gradcheck

    _echo_and_save(cfg, cfg["out"] or None)
    results = run_gradcheck(seed=cfg["seed"], corrupt=cfg["corrupt"] or None, tiny=cfg["tiny"])
    table = format_table(results)
    print(table)
    worst = max(results, key=lambda r: r.max_rel_err if math.isfinite(r.max_rel_err)
                else float("inf"))
    print(f"max relative error: {worst.max_rel_err:.3e} ({worst.name})")
    if cfg["out"]:
        (Path(cfg["out"]) / "gradcheck.txt").write_text(table + "\n")
    failed = [r.name for r in results if not r.ok]
    if failed:
        print(f"gradient check FAILED (tolerance {TOLERANCE:g}): {', '.join(failed)}",
              file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "train": cmd_train,
    "enhance": cmd_enhance,
    "featurize": cmd_featurize,
    "prepare-stimuli": cmd_prepare_stimuli,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowenhance",
                                     description="Normalizing-flow speech enhancement tools.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="file of 'key = value' lines (overridden by flags)")
        return p

    p = add("train", "train a flow by maximum likelihood")
    p.add_argument("--manifest", help="training manifest (clean<TAB>noise<TAB>snr_db)")
    p.add_argument("--val-manifest", dest="val_manifest")
    p.add_argument("--cond", choices=CHOICES["cond"])
    p.add_argument("--out")
    p.add_argument("--blocks", type=int)
    p.add_argument("--g", type=int, help="squeeze factor")
    p.add_argument("--mode", choices=CHOICES["mode"])
    p.add_argument("--hidden", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--kernel-size", dest="kernel_size", type=int)
    p.add_argument("--cond-channels", dest="cond_channels", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--chunk-s", dest="chunk_s", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-decay", dest="lr_decay", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--sigma-train", dest="sigma_train", type=float)
    p.add_argument("--sigma-infer", dest="sigma_infer", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--dry-run", dest="dry_run", action="store_const", const=True,
                   help="build the model, report its size and exit")

    p = add("enhance", "enhance noisy WAV files with a trained checkpoint")
    p.add_argument("--ckpt")
    p.add_argument("--in", dest="in", help="WAV file or directory of WAV files")
    p.add_argument("--out")
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--ref", help="directory of clean references (same file names)")

    p = add("featurize", "write Mel or APG feature dumps")
    p.add_argument("--kind", choices=CHOICES["kind"])
    p.add_argument("--in", dest="in")
    p.add_argument("--out")
    p.add_argument("--dump-design", dest="dump_design", action="store_const", const=True)
    p.add_argument("--log-features", dest="log_features", action="store_const", const=True)

    p = add("prepare-stimuli", "loudness-match and normalize listening-test stimuli")
    p.add_argument("--item", help="directory with mixture.wav, clean.wav and sys_*.wav")
    p.add_argument("--out")
    p.add_argument("--target-lufs", dest="target_lufs", type=float)

    p = add("gradcheck", "finite-difference check of every gradient")
    p.add_argument("--tiny", action="store_const", const=True,
                   help="only the small single-block cases (skips 2-block and APG models)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--corrupt", help=argparse.SUPPRESS)  # negative-control hook
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args.command, args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FlowEnhanceError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

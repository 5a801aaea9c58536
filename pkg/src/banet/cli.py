"""Command-line entry point: synth, train, eval, predict, verify.

Exit codes: 0 success, 1 usage/config error, 2 data error,
3 numeric failure, 4 verification failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .config import (ConfigError, RunConfig, augment_config, load_config,
                     model_config, synth_config, train_config)
from .data import DataError, load_dataset, synth_generate, write_dataset
from .heads import init_params
from .netpbm import NetpbmError, read_ppm, write_pgm
from .params import restore_checkpoint
from .train import NumericError, conform, evaluate, predict_probability, train
from .verify import run_all


def _dump_config(cfg: RunConfig, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.resolved").write_text(cfg.resolved_text())


def _new_run_dir(base: str, cfg_hash: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    candidate = Path(base) / f"{cfg_hash}-{stamp}"
    suffix = 0
    while candidate.exists():
        suffix += 1
        candidate = Path(base) / f"{cfg_hash}-{stamp}-{suffix}"
    candidate.mkdir(parents=True)
    return candidate


def _split_samples(samples, split: str, train_count: int):
    samples = sorted(samples, key=lambda s: s.id)
    if split == "train":
        chosen = samples[:train_count]
    elif split == "test":
        chosen = samples[train_count:]
    elif split == "all":
        chosen = samples
    else:
        raise ConfigError(f"unknown split {split!r}")
    if not chosen:
        raise DataError(f"split {split!r} selected no samples "
                        f"(dataset has {len(samples)}, train_count={train_count})")
    return chosen


def cmd_synth(cfg: RunConfig) -> int:
    scfg = synth_config(cfg)
    out_dir = Path(cfg["synth.out_dir"])
    samples = synth_generate(scfg)
    write_dataset(samples, out_dir, seed=scfg.seed)
    _dump_config(cfg, out_dir)
    print(f"wrote {len(samples)} samples to {out_dir}")
    return 0


def cmd_train(cfg: RunConfig, resume_dir: str | None) -> int:
    mcfg = model_config(cfg)
    tcfg = train_config(cfg)
    acfg = augment_config(cfg)
    samples = _split_samples(load_dataset(cfg["data.dir"], cfg["data.edge_width"]),
                             "train", cfg["data.train_count"])
    if resume_dir is not None:
        run_dir = Path(resume_dir)
        result = train(mcfg, samples, tcfg, acfg, run_dir, resume=True)
    else:
        run_dir = _new_run_dir(cfg["train.out_dir"], cfg.hash())
        _dump_config(cfg, run_dir)
        result = train(mcfg, samples, tcfg, acfg, run_dir)
    last = result.log_rows[-1]
    print(f"run dir: {result.run_dir}")
    print(f"final checkpoint: {result.checkpoint_path}")
    print(f"epoch {last['epoch']} loss_total {last['loss_total']}")
    return 0


def _load_model(cfg: RunConfig, checkpoint: str):
    mcfg = model_config(cfg)
    store = init_params(mcfg, cfg["train.seed"])
    restore_checkpoint(checkpoint, store)
    return mcfg, store


def cmd_eval(cfg: RunConfig, checkpoint: str, split: str) -> int:
    mcfg, store = _load_model(cfg, checkpoint)
    samples = _split_samples(load_dataset(cfg["data.dir"], cfg["data.edge_width"]),
                             split, cfg["data.train_count"])
    out_dir = Path(checkpoint).parent
    csv_path = out_dir / f"eval_{split}.csv"
    report = evaluate(mcfg, store, samples, csv_path,
                      out_size=cfg["data.out_size"], threshold=cfg["train.threshold"])
    _dump_config(cfg, out_dir)
    print(f"wrote {csv_path}")
    print(f"mean: DI {report.di:.4f} JA {report.ja:.4f} AC {report.ac:.4f} "
          f"SE {report.se:.4f} SP {report.sp:.4f}")
    return 0


def cmd_predict(cfg: RunConfig, checkpoint: str, image_path: str, out_path: str) -> int:
    mcfg, store = _load_model(cfg, checkpoint)
    raw = read_ppm(image_path)
    h, w = raw.shape[:2]
    image = (raw.astype(np.float32) / 255.0).transpose(2, 0, 1)[None]
    from .data import resize_bilinear, resize_nearest
    size = cfg["data.out_size"]
    prob = predict_probability(mcfg, store, resize_bilinear(image, size, size)
                               .astype(np.float32))
    mask = (prob[0, 0] >= cfg["train.threshold"]).astype(np.float32)
    mask = resize_nearest(mask, h, w)
    write_pgm(out_path, np.where(mask > 0.5, 255, 0).astype(np.uint8))
    Path(str(out_path) + ".config").write_text(cfg.resolved_text())
    print(f"wrote {out_path}")
    return 0


def cmd_verify(quick: bool) -> int:
    results = run_all(quick=quick)
    failed = 0
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        print(f"{status} {r.name}: {r.detail}")
        failed += 0 if r.ok else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="banet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key")

    common(sub.add_parser("synth", help="generate a synthetic dataset"))
    p_train = sub.add_parser("train", help="train a model")
    common(p_train)
    p_train.add_argument("--resume", metavar="RUN_DIR",
                         help="continue training from an existing run directory")
    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--split", choices=("train", "test", "all"), default="test")
    p_pred = sub.add_parser("predict", help="predict a mask for one image")
    common(p_pred)
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--image", required=True, help="input PPM image")
    p_pred.add_argument("--out", required=True, help="output PGM mask")
    p_verify = sub.add_parser("verify", help="run the verification suites")
    p_verify.add_argument("--quick", action="store_true",
                          help="reduced instance counts")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "verify":
            return cmd_verify(args.quick)
        cfg = load_config(args.config, args.set)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.resume)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.split)
        if args.command == "predict":
            return cmd_predict(cfg, args.checkpoint, args.image, args.out)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except (DataError, NetpbmError, FileNotFoundError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

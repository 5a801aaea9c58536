"""Training and evaluation loops with deterministic seeding.

Every random stream is keyed by (seed, purpose, epoch, sample), so
re-running an identical config reproduces checkpoints and logs byte for
byte, and resuming at an epoch boundary matches an uninterrupted run.
"""

from __future__ import annotations

import csv
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import AugmentConfig, Sample, augment, derive_edge_mask, resize_bilinear, resize_nearest
from .heads import HeadOutputs, ModelConfig, banet_forward, init_params
from .losses import LossBreakdown, total_loss
from .metrics import MetricReport, confusion, metrics, write_eval_csv
from .optim import OptimizerState, poly_lr, sgd_step
from .params import ParameterStore, restore_checkpoint, save_checkpoint
from .tensor import Tensor, backward


class NumericError(RuntimeError):
    """Raised when training hits a non-finite value."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 4
    seed: int = 1
    lambdas: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    base_lr: float = 1e-4
    momentum: float = 0.9
    poly_power: float = 0.9
    checkpoint_every: int = 10
    workers: int = 1
    augment_enabled: bool = True
    threshold: float = 0.5

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


LOG_HEADER = ["epoch", "iter", "lr", "loss_decoder",
              "loss_edge1", "loss_edge2", "loss_edge3", "loss_edge4",
              "loss_seg1", "loss_seg2", "loss_seg3", "loss_seg4", "loss_total"]


@dataclass
class TrainResult:
    run_dir: Path
    checkpoint_path: Path
    log_rows: list[dict]
    store: ParameterStore
    total_iters: int


def conform(sample: Sample, out_size: int, edge_width: int = 3) -> Sample:
    """Resize a sample to the working resolution without augmentation."""
    img = resize_bilinear(sample.image, out_size, out_size).astype(np.float32)
    seg = resize_nearest(sample.seg_mask, out_size, out_size).astype(np.float32)
    return Sample(image=np.ascontiguousarray(img), seg_mask=np.ascontiguousarray(seg),
                  edge_mask=derive_edge_mask(seg, edge_width), id=sample.id,
                  meta=sample.meta)


def _augment_rng(seed: int, epoch: int, sample_id: str) -> np.random.Generator:
    return np.random.default_rng((seed, 2, epoch, zlib.crc32(sample_id.encode())))


def _batch_tensors(batch: list[Sample]):
    image = Tensor(np.concatenate([s.image for s in batch], axis=0))
    g_s = Tensor(np.concatenate([s.seg_mask for s in batch], axis=0))
    g_e = Tensor(np.concatenate([s.edge_mask for s in batch], axis=0))
    return image, g_s, g_e


def _first_nonfinite(outputs: HeadOutputs, bundles) -> str:
    named = []
    for i, b in enumerate(bundles, start=1):
        for attr in ("raw", "reduced", "pee", "mtl", "cff", "edge_logits", "seg_logits"):
            t = getattr(b, attr)
            if t is not None:
                named.append((f"stage{i}.{attr}", t))
    named.append(("seg_logits", outputs.seg_logits))
    for name, t in named:
        if not np.all(np.isfinite(t.data)):
            return name
    return "loss"


def _format(v) -> str:
    return f"{v:.10g}" if isinstance(v, float) else str(v)


def train(model_cfg: ModelConfig, samples: list[Sample], tcfg: TrainConfig,
          aug_cfg: AugmentConfig, run_dir, resume: bool = False) -> TrainResult:
    """Run the optimization loop; writes train_log.csv, timing.txt and
    checkpoints under run_dir."""
    if not samples:
        raise ValueError("train: empty dataset")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = run_dir / "checkpoint.banc"
    opt_path = run_dir / "optstate.banc"
    progress_path = run_dir / "progress.txt"
    log_path = run_dir / "train_log.csv"
    timing_path = run_dir / "timing.txt"

    n = len(samples)
    iters_per_epoch = -(-n // tcfg.batch_size)
    total_iters = tcfg.epochs * iters_per_epoch

    store = init_params(model_cfg, tcfg.seed)
    state = OptimizerState(total_iters=total_iters, momentum=tcfg.momentum,
                           base_lr=tcfg.base_lr, poly_power=tcfg.poly_power)

    start_epoch = 1
    log_rows: list[dict] = []
    if resume:
        if not progress_path.exists():
            raise ValueError(f"{run_dir}: nothing to resume from")
        start_epoch = int(progress_path.read_text().strip()) + 1
        restore_checkpoint(ckpt_path, store)
        vel_store = ParameterStore()
        for name, p in store.items():
            vel_store.add(name, Tensor(np.zeros_like(p.data)))
        restore_checkpoint(opt_path, vel_store)
        state.velocities = {name: t.data for name, t in vel_store.items()}
        with open(log_path, newline="") as f:
            log_rows = list(csv.DictReader(f))

    def flush_outputs(epoch: int) -> None:
        save_checkpoint(ckpt_path, store)
        vel_store = ParameterStore()
        for name, p in store.items():
            v = state.velocities.get(name, np.zeros_like(p.data))
            vel_store.add(name, Tensor(v))
        save_checkpoint(opt_path, vel_store)
        progress_path.write_text(f"{epoch}\n")
        with open(log_path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=LOG_HEADER)
            writer.writeheader()
            writer.writerows(log_rows)

    global_it = (start_epoch - 1) * iters_per_epoch
    for epoch in range(start_epoch, tcfg.epochs + 1):
        t0 = time.perf_counter()
        shuffle_rng = np.random.default_rng((tcfg.seed, 1, epoch))
        order = shuffle_rng.permutation(n)
        sums = np.zeros(10)  # decoder, 4 edge, 4 seg, total
        lr = state.base_lr
        for k in range(0, n, tcfg.batch_size):
            batch = []
            for idx in order[k:k + tcfg.batch_size]:
                s = samples[int(idx)]
                if tcfg.augment_enabled:
                    batch.append(augment(s, aug_cfg, _augment_rng(tcfg.seed, epoch, s.id)))
                else:
                    batch.append(conform(s, aug_cfg.out_size, aug_cfg.edge_width))
            image, g_s, g_e = _batch_tensors(batch)
            outputs, bundles = banet_forward(image, model_cfg, store, return_stages=True)
            breakdown = total_loss(outputs, g_s, g_e, tcfg.lambdas)
            total_val = breakdown.total_value()
            if not np.isfinite(total_val):
                offender = _first_nonfinite(outputs, bundles)
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, iter {global_it}; "
                    f"first non-finite tensor: {offender}")
            backward(breakdown.total)
            lr = poly_lr(global_it, state)
            sgd_step(store, state, lr)
            global_it += 1

            edges = list(breakdown.stage_edge) + [0.0] * (4 - len(breakdown.stage_edge))
            segs = list(breakdown.stage_seg) + [0.0] * (4 - len(breakdown.stage_seg))
            sums += np.array([breakdown.decoder_loss] + edges + segs + [total_val])

        means = sums / iters_per_epoch
        row = dict(zip(LOG_HEADER,
                       [epoch, global_it, _format(lr)]
                       + [_format(float(v)) for v in means]))
        log_rows.append(row)
        with open(timing_path, "a") as f:
            f.write(f"{epoch},{time.perf_counter() - t0:.3f}\n")
        if epoch % tcfg.checkpoint_every == 0 or epoch == tcfg.epochs:
            flush_outputs(epoch)

    return TrainResult(run_dir=run_dir, checkpoint_path=ckpt_path,
                       log_rows=log_rows, store=store, total_iters=total_iters)


def predict_probability(model_cfg: ModelConfig, store: ParameterStore,
                        image: np.ndarray) -> np.ndarray:
    """Sigmoid probability map for one (1, 3, h, w) image array."""
    outputs = banet_forward(Tensor(image), model_cfg, store)
    logits = outputs.seg_logits.data
    return 1.0 / (1.0 + np.exp(-logits.astype(np.float64)))


def evaluate(model_cfg: ModelConfig, store: ParameterStore, samples: list[Sample],
             csv_path, out_size: int, threshold: float = 0.5) -> MetricReport:
    """Per-image metrics at the working resolution; no augmentation."""
    if not samples:
        raise ValueError("evaluate: empty dataset")
    rows: list[tuple[str, MetricReport]] = []
    for s in sorted(samples, key=lambda s: s.id):
        c = conform(s, out_size)
        prob = predict_probability(model_cfg, store, c.image)
        counts = confusion(prob, c.seg_mask.astype(np.float64), threshold)
        rows.append((s.id, metrics(*counts)))
    return write_eval_csv(csv_path, rows)

"""Pyramid edge extraction, mini multi-task heads with interactive
attention, cross feature fusion, and the decoder: the full model
assembly on top of the encoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import (BackboneConfig, StageBundle, aspp_forward, aspp_layers,
                       backbone_forward, backbone_layers)
from .layers import ConvSpec, apply, register
from .params import ParameterStore
from .tensor import (Tensor, add, avg_pool2d, bilinear_resize, concat_channels,
                     mul, relu, scalar_rsub, sigmoid, sub)

DEFAULT_POOL_SIZES = ((5, 7), (5, 7), (3, 5), (3, 5))


@dataclass(frozen=True)
class PeeConfig:
    pool_sizes_per_stage: tuple[tuple[int, ...], ...] = DEFAULT_POOL_SIZES

    def __post_init__(self):
        if len(self.pool_sizes_per_stage) != 4:
            raise ValueError("pool_sizes_per_stage needs 4 entries")
        for sizes in self.pool_sizes_per_stage:
            for k in sizes:
                if k % 2 == 0 or k < 3:
                    raise ValueError(f"pool size {k} must be odd and >= 3")


@dataclass(frozen=True)
class AblationFlags:
    pee: bool = True
    mtl: bool = True
    cff: bool = True
    ia: bool = True


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    pee: PeeConfig = field(default_factory=PeeConfig)
    flags: AblationFlags = field(default_factory=AblationFlags)
    decoder_channels: int = 32


@dataclass
class HeadOutputs:
    """Final and per-stage predictions, all at input resolution."""
    seg_logits: Tensor
    stage_edge_logits: list[Tensor]
    stage_seg_logits: list[Tensor]


def stage_head_layers(cfg: ModelConfig, i: int) -> list[ConvSpec]:
    """Per-stage PEE and multi-task convolutions (1-based stage index)."""
    rc = cfg.backbone.reduce_channels
    specs: list[ConvSpec] = []
    if cfg.flags.pee:
        n_pools = len(cfg.pee.pool_sizes_per_stage[i - 1])
        specs.append(ConvSpec(f"stage{i}.pee.fuse", (n_pools + 1) * rc, rc, 1))
    if cfg.flags.mtl:
        for branch in ("edge", "seg"):
            specs.append(ConvSpec(f"stage{i}.{branch}.conv1", rc, rc, 3))
            specs.append(ConvSpec(f"stage{i}.{branch}.conv2", rc, rc, 3))
            specs.append(ConvSpec(f"stage{i}.{branch}.pred", rc, 1, 1))
        specs.append(ConvSpec(f"stage{i}.mtl.fuse", 2 * rc, rc, 1))
    return specs


def decoder_layers(cfg: ModelConfig) -> list[ConvSpec]:
    rc = cfg.backbone.reduce_channels
    dc = cfg.decoder_channels
    specs = [ConvSpec("decoder.d4", cfg.backbone.aspp_out_channels + rc, dc, 1)]
    for i in (3, 2, 1):
        specs.append(ConvSpec(f"decoder.d{i}", dc + rc, dc, 1))
    specs.append(ConvSpec("decoder.head", dc, 1, 1))
    return specs


def model_layers(cfg: ModelConfig) -> list[ConvSpec]:
    """Every convolution in registration order; the introspection dump."""
    specs = backbone_layers(cfg.backbone) + aspp_layers(cfg.backbone)
    for i in range(1, 5):
        specs += stage_head_layers(cfg, i)
    specs += decoder_layers(cfg)
    return specs


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> ParameterStore:
    store = ParameterStore()
    rng = np.random.default_rng((seed, 0))
    for spec in model_layers(cfg):
        register(spec, store, rng, dtype)
    return store


def pee_difference_maps(reduced: Tensor, pool_sizes) -> list[Tensor]:
    """One edge map per pool size: the feature minus its local mean."""
    maps = []
    for k in pool_sizes:
        if k % 2 == 0:
            raise ValueError(f"pee pool size {k} must be odd")
        maps.append(sub(reduced, avg_pool2d(reduced, k, stride=1, padding=(k - 1) // 2)))
    return maps


def pee_forward(reduced: Tensor, pool_sizes, store: ParameterStore,
                stage: int) -> Tensor:
    """Fuse the multi-granularity edge maps with the stage feature."""
    rc = reduced.shape[1]
    fuse = ConvSpec(f"stage{stage}.pee.fuse", (len(pool_sizes) + 1) * rc, rc, 1)
    stacked = concat_channels(pee_difference_maps(reduced, pool_sizes) + [reduced])
    return apply(fuse, stacked, store)


def interactive_attention(f_e: Tensor, f_s: Tensor) -> tuple[Tensor, Tensor]:
    """Parameter-free gated exchange between the two task branches.

    Both outputs are computed from the pre-update values, so swapping
    the arguments swaps the outputs.
    """
    if f_e.shape != f_s.shape:
        raise ValueError(f"interactive_attention: shape mismatch {f_e.shape} vs {f_s.shape}")
    e_out = add(f_e, mul(scalar_rsub(1.0, sigmoid(f_e)), f_s))
    s_out = add(f_s, mul(scalar_rsub(1.0, sigmoid(f_s)), f_e))
    return e_out, s_out


def mtl_forward(x: Tensor, store: ParameterStore, stage: int, ia_enabled: bool,
                out_hw: tuple[int, int]):
    """Two-branch edge/seg head over a stage feature.

    Returns (fused feature, edge logits, seg logits); the logit maps are
    upsampled to the network input resolution `out_hw`.
    """
    rc = x.shape[1]
    conv = lambda branch, layer: ConvSpec(f"stage{stage}.{branch}.conv{layer}", rc, rc, 3)
    e = relu(apply(conv("edge", 1), x, store))
    s = relu(apply(conv("seg", 1), x, store))
    if ia_enabled:
        e, s = interactive_attention(e, s)
    e = relu(apply(conv("edge", 2), e, store))
    s = relu(apply(conv("seg", 2), s, store))

    pred = lambda branch: ConvSpec(f"stage{stage}.{branch}.pred", rc, 1, 1)
    edge_logits = bilinear_resize(apply(pred("edge"), e, store), *out_hw)
    seg_logits = bilinear_resize(apply(pred("seg"), s, store), *out_hw)
    fused = apply(ConvSpec(f"stage{stage}.mtl.fuse", 2 * rc, rc, 1),
                  concat_channels([e, s]), store)
    return fused, edge_logits, seg_logits


def cff_forward(stage_feats: list[Tensor], i: int) -> Tensor:
    """Gated aggregation of the other stages' features into stage i (0-based).

    Contributors are resized to stage i's spatial size; with no
    contributors (or all-zero ones) the stage feature passes through
    unchanged.
    """
    target = stage_feats[i]
    h, w = target.shape[2], target.shape[3]
    acc = None
    for j, f in enumerate(stage_feats):
        if j == i:
            continue
        if f.shape[1] != target.shape[1]:
            raise ValueError(f"cff_forward: channel mismatch {f.shape[1]} vs {target.shape[1]}")
        if (f.shape[2], f.shape[3]) != (h, w):
            f = bilinear_resize(f, h, w)
        term = mul(sigmoid(f), f)
        acc = term if acc is None else add(acc, term)
    if acc is None:
        return target
    return add(target, mul(scalar_rsub(1.0, sigmoid(target)), acc))


def decoder_forward(f_a: Tensor, stage_feats: list[Tensor], store: ParameterStore,
                    cfg: ModelConfig, out_hw: tuple[int, int]) -> Tensor:
    """Top-down fusion of the ASPP output with the per-stage features."""
    specs = {s.name: s for s in decoder_layers(cfg)}
    d = relu(apply(specs["decoder.d4"], concat_channels([f_a, stage_feats[3]]), store))
    for i in (3, 2, 1):
        target = stage_feats[i - 1]
        h, w = target.shape[2], target.shape[3]
        if (d.shape[2], d.shape[3]) != (h, w):
            d = bilinear_resize(d, h, w)
        d = relu(apply(specs[f"decoder.d{i}"], concat_channels([d, target]), store))
    return bilinear_resize(apply(specs["decoder.head"], d, store), *out_hw)


def banet_forward(image: Tensor, cfg: ModelConfig, store: ParameterStore,
                  return_stages: bool = False):
    """Full pipeline: encoder -> PEE -> mini-MTL -> CFF -> decoder.

    A disabled module passes its input feature through unchanged; with
    the multi-task module off, no stage predictions are produced.
    """
    out_hw = (image.shape[2], image.shape[3])
    bundles = backbone_forward(image, cfg.backbone, store)
    f_a = aspp_forward(bundles[3].raw, cfg.backbone, store)

    for i, b in enumerate(bundles, start=1):
        x = b.reduced
        if cfg.flags.pee:
            x = pee_forward(x, cfg.pee.pool_sizes_per_stage[i - 1], store, i)
        b.pee = x
        if cfg.flags.mtl:
            b.mtl, b.edge_logits, b.seg_logits = mtl_forward(
                x, store, i, cfg.flags.ia, out_hw)
        else:
            b.mtl = x

    mtl_feats = [b.mtl for b in bundles]
    if cfg.flags.cff:
        for i, b in enumerate(bundles):
            b.cff = cff_forward(mtl_feats, i)
    else:
        for b in bundles:
            b.cff = b.mtl

    seg = decoder_forward(f_a, [b.cff for b in bundles], store, cfg, out_hw)
    outputs = HeadOutputs(
        seg_logits=seg,
        stage_edge_logits=[b.edge_logits for b in bundles] if cfg.flags.mtl else [],
        stage_seg_logits=[b.seg_logits for b in bundles] if cfg.flags.mtl else [],
    )
    if return_stages:
        return outputs, bundles
    return outputs

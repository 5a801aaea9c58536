"""Residual encoder with atrous final stages and the ASPP context head.

Stage geometry is fixed: cumulative output strides 4, 8, 8, 8, with
stages 3 and 4 trading stride for dilation 2. Channel widths and block
counts come from the config.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .layers import ConvSpec, apply
from .params import ParameterStore
from .tensor import (Tensor, add, bilinear_resize, concat_channels,
                     global_avg_pool, relu)

STAGE_STRIDES = (2, 2, 1, 1)
STAGE_DILATIONS = (1, 1, 2, 2)


@dataclass(frozen=True)
class BackboneConfig:
    stem_channels: int = 16
    stage_channels: tuple[int, int, int, int] = (16, 32, 64, 64)
    blocks_per_stage: tuple[int, int, int, int] = (1, 1, 1, 1)
    aspp_rates: tuple[int, int, int, int] = (1, 2, 4, 6)
    aspp_out_channels: int = 64
    reduce_channels: int = 32

    def __post_init__(self):
        if self.reduce_channels <= 0:
            raise ValueError("reduce_channels must be positive")
        if len(self.stage_channels) != 4 or len(self.blocks_per_stage) != 4:
            raise ValueError("stage_channels and blocks_per_stage need 4 entries")
        if len(self.aspp_rates) != 4:
            raise ValueError("aspp_rates needs 4 entries")


@dataclass
class StageBundle:
    """Per-stage features, filled progressively along the pipeline."""
    raw: Tensor                      # stage output
    reduced: Tensor                  # after the 1x1 channel reduction
    pee: Tensor | None = None
    mtl: Tensor | None = None
    cff: Tensor | None = None
    edge_logits: Tensor | None = None
    seg_logits: Tensor | None = None


def backbone_layers(cfg: BackboneConfig) -> list[ConvSpec]:
    specs = [ConvSpec("backbone.stem", 3, cfg.stem_channels, 3, stride=2)]
    cin = cfg.stem_channels
    for i in range(4):
        cout = cfg.stage_channels[i]
        dil = STAGE_DILATIONS[i]
        for b in range(cfg.blocks_per_stage[i]):
            stride = STAGE_STRIDES[i] if b == 0 else 1
            p = f"backbone.stage{i + 1}.block{b}"
            specs.append(ConvSpec(f"{p}.conv1", cin, cout, 3, stride=stride, dilation=dil))
            specs.append(ConvSpec(f"{p}.conv2", cout, cout, 3, dilation=dil))
            if stride != 1 or cin != cout:
                specs.append(ConvSpec(f"{p}.proj", cin, cout, 1, stride=stride))
            cin = cout
    for i in range(4):
        specs.append(ConvSpec(f"backbone.stage{i + 1}.reduce",
                              cfg.stage_channels[i], cfg.reduce_channels, 1))
    return specs


def aspp_layers(cfg: BackboneConfig) -> list[ConvSpec]:
    cin = cfg.stage_channels[3]
    cout = cfg.aspp_out_channels
    specs = [ConvSpec("aspp.branch0", cin, cout, 1)]
    for b, rate in enumerate(cfg.aspp_rates[1:], start=1):
        specs.append(ConvSpec(f"aspp.branch{b}", cin, cout, 3, dilation=rate))
    specs.append(ConvSpec("aspp.pool", cin, cout, 1))
    specs.append(ConvSpec("aspp.project", 5 * cout, cout, 1))
    return specs


def _spec_map(specs: list[ConvSpec]) -> dict[str, ConvSpec]:
    return {s.name: s for s in specs}


def backbone_forward(image: Tensor, cfg: BackboneConfig,
                     store: ParameterStore) -> list[StageBundle]:
    """Run the stem and four residual stages; returns one bundle per stage."""
    n, c, h, w = image.shape
    if h % 8 != 0 or w % 8 != 0:
        raise ValueError(f"input spatial size {h}x{w} must be divisible by 8")
    specs = _spec_map(backbone_layers(cfg))

    x = relu(apply(specs["backbone.stem"], image, store))
    bundles: list[StageBundle] = []
    for i in range(4):
        for b in range(cfg.blocks_per_stage[i]):
            p = f"backbone.stage{i + 1}.block{b}"
            y = apply(specs[f"{p}.conv2"], relu(apply(specs[f"{p}.conv1"], x, store)), store)
            skip = apply(specs[f"{p}.proj"], x, store) if f"{p}.proj" in specs else x
            x = relu(add(y, skip))
        reduced = apply(specs[f"backbone.stage{i + 1}.reduce"], x, store)
        bundles.append(StageBundle(raw=x, reduced=reduced))
    return bundles


def aspp_forward(f4: Tensor, cfg: BackboneConfig, store: ParameterStore) -> Tensor:
    """Parallel atrous branches plus a global-pooling branch, fused by 1x1 conv."""
    specs = _spec_map(aspp_layers(cfg))
    h, w = f4.shape[2], f4.shape[3]
    branches = [relu(apply(specs[f"aspp.branch{b}"], f4, store)) for b in range(4)]
    pooled = relu(apply(specs["aspp.pool"], global_avg_pool(f4), store))
    branches.append(bilinear_resize(pooled, h, w))
    return apply(specs["aspp.project"], concat_channels(branches), store)

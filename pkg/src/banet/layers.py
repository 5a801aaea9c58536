"""Convolution layer descriptors shared by the encoder and the heads.

A `ConvSpec` is both the registration record (what parameters exist)
and the execution record (stride/dilation/padding used at apply time),
so architecture introspection and the forward pass cannot drift apart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParameterStore
from .tensor import Tensor, conv2d


@dataclass(frozen=True)
class ConvSpec:
    name: str
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    dilation: int = 1

    @property
    def padding(self) -> int:
        # same-size padding for odd kernels at stride 1
        return self.dilation * (self.kernel - 1) // 2

    def param_count(self) -> int:
        return self.out_channels * self.in_channels * self.kernel ** 2 + self.out_channels


def register(spec: ConvSpec, store: ParameterStore, rng: np.random.Generator,
             dtype=np.float32) -> None:
    store.create_conv_weight(f"{spec.name}.w", spec.out_channels,
                             spec.in_channels, spec.kernel, rng, dtype)
    store.create_zeros(f"{spec.name}.b", (1, spec.out_channels, 1, 1), dtype)


def apply(spec: ConvSpec, x: Tensor, store: ParameterStore) -> Tensor:
    return conv2d(x, store[f"{spec.name}.w"], store[f"{spec.name}.b"],
                  stride=spec.stride, padding=spec.padding, dilation=spec.dilation)

"""Joint multi-task loss assembly."""

from __future__ import annotations

from dataclasses import dataclass

from .heads import HeadOutputs
from .tensor import Tensor, add, bce_loss, scale


@dataclass
class LossBreakdown:
    """Total loss tensor plus float snapshots of every component.

    total always equals decoder_loss + sum_i lambdas[i] *
    (stage_edge[i] + stage_seg[i]) over the present stage terms.
    """
    total: Tensor
    decoder_loss: float
    stage_edge: tuple[float, ...]
    stage_seg: tuple[float, ...]
    lambdas: tuple[float, ...]

    def total_value(self) -> float:
        return self.total.item()


def total_loss(outputs: HeadOutputs, g_s: Tensor, g_e: Tensor,
               lambdas=(1.0, 1.0, 1.0, 1.0)) -> LossBreakdown:
    """Decoder BCE plus lambda-weighted per-stage edge and seg BCE terms.

    With the multi-task module ablated the stage terms are absent and
    the total reduces to the decoder loss.
    """
    decoder = bce_loss(outputs.seg_logits, g_s)
    total = decoder
    edge_vals: list[float] = []
    seg_vals: list[float] = []
    for i, (edge_logits, seg_logits) in enumerate(
            zip(outputs.stage_edge_logits, outputs.stage_seg_logits)):
        le = bce_loss(edge_logits, g_e)
        ls = bce_loss(seg_logits, g_s)
        total = add(total, scale(add(le, ls), float(lambdas[i])))
        edge_vals.append(le.item())
        seg_vals.append(ls.item())
    return LossBreakdown(total=total, decoder_loss=decoder.item(),
                         stage_edge=tuple(edge_vals), stage_seg=tuple(seg_vals),
                         lambdas=tuple(float(l) for l in lambdas))

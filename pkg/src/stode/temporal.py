"""Gated multi-width dilated temporal convolution and its ODE wiring.

One parameter set drives every aggregation step; the dilation grows as
``floor(r ** step)``. After each step the shortened output is left
zero-padded back to the receptive field so the state shape is constant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DimensionError, Tensor
from .functional import conv1d_dilated, pad_left_zero, truncate_last
from .solver import SolverSpec

__all__ = [
    "DEFAULT_WIDTHS",
    "TcnParams",
    "CtaSchedule",
    "receptive_field",
    "dilation_at",
    "informative_length",
    "truncate_last",
    "pad_left_zero",
    "gated_tcn",
    "cta_field_plain",
    "residual_stack",
]

DEFAULT_WIDTHS = (2, 3, 6, 7)


def receptive_field(r: int, k: int, L: int) -> int:
    """Input span seen by L dilated layers of kernel width k and dilation base r."""
    if r < 1 or k < 1 or L < 1:
        raise ContractError("receptive_field needs r >= 1, k >= 1, L >= 1")
    if r == 1:
        return L * (k - 1) + 1
    return 1 + (k - 1) * (r ** L - 1) // (r - 1)


def dilation_at(r, step_index: int) -> int:
    if step_index < 0:
        raise ContractError("step index must be non-negative")
    if float(r).is_integer():
        return int(r) ** step_index
    return math.floor(r ** step_index)


def informative_length(R: int, widths: Sequence[int], r, steps: int) -> int:
    """Slots still carrying data after ``steps`` aggregations from length R."""
    shrink = (max(widths) - 1) * sum(dilation_at(r, i) for i in range(steps))
    return R - shrink


@dataclass
class TcnParams:
    """Filter and gate kernels per width; each width emits channels // len(widths)."""

    widths: tuple[int, ...]
    filter_w: list[Tensor]
    filter_b: list[Tensor]
    gate_w: list[Tensor]
    gate_b: list[Tensor]

    def __post_init__(self):
        self.widths = tuple(int(m) for m in self.widths)
        n = len(self.widths)
        if not (len(self.filter_w) == len(self.filter_b) == len(self.gate_w) == len(self.gate_b) == n):
            raise DimensionError("one filter/gate kernel pair is needed per width")
        for m, w in zip(self.widths, self.filter_w):
            if w.shape[2] != m:
                raise DimensionError(f"kernel for width {m} has shape {w.shape}")

    @property
    def channels(self) -> int:
        return self.filter_w[0].shape[1]

    @classmethod
    def init(cls, channels: int, widths: Sequence[int], rng: np.random.Generator) -> "TcnParams":
        widths = tuple(widths)
        if channels % len(widths):
            raise ContractError(f"hidden dim {channels} not divisible by {len(widths)} widths")
        per = channels // len(widths)
        fw, fb, gw, gb = [], [], [], []
        for m in widths:
            bound = 1.0 / math.sqrt(channels * m)
            fw.append(Tensor(rng.uniform(-bound, bound, (per, channels, m)), requires_grad=True))
            fb.append(Tensor(rng.uniform(-bound, bound, per), requires_grad=True))
            gw.append(Tensor(rng.uniform(-bound, bound, (per, channels, m)), requires_grad=True))
            gb.append(Tensor(rng.uniform(-bound, bound, per), requires_grad=True))
        return cls(widths, fw, fb, gw, gb)

    @classmethod
    def zeros(cls, channels: int, widths: Sequence[int]) -> "TcnParams":
        widths = tuple(widths)
        per = channels // len(widths)
        mk = lambda *s: Tensor(np.zeros(s), requires_grad=True)  # noqa: E731
        return cls(
            widths,
            [mk(per, channels, m) for m in widths],
            [mk(per) for _ in widths],
            [mk(per, channels, m) for m in widths],
            [mk(per) for _ in widths],
        )

    def tensors(self) -> dict[str, Tensor]:
        out = {}
        for i, m in enumerate(self.widths):
            out[f"filter_w{m}"] = self.filter_w[i]
            out[f"filter_b{m}"] = self.filter_b[i]
            out[f"gate_w{m}"] = self.gate_w[i]
            out[f"gate_b{m}"] = self.gate_b[i]
        return out


@dataclass
class CtaSchedule:
    r: int
    spec: SolverSpec
    widths: tuple[int, ...] = DEFAULT_WIDTHS
    R: int = field(init=False)

    def __post_init__(self):
        if self.r < 1:
            raise ContractError("dilation factor must be >= 1")
        self.widths = tuple(self.widths)
        self.R = receptive_field(self.r, max(self.widths), self.spec.steps)

    @property
    def steps(self) -> int:
        return self.spec.steps


def _branch(x: Tensor, weights, biases, widths, delta, q_out) -> Tensor:
    parts = []
    for w, b in zip(weights, biases):
        parts.append(truncate_last(conv1d_dilated(x, w, b, delta), q_out))
    return parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)


def gated_tcn(H, params: TcnParams, delta: int) -> Tensor:
    """tanh(filter conv) * sigmoid(gate conv), all widths aligned on the newest slot."""
    H = ad.as_tensor(H)
    if H.ndim < 3:
        raise DimensionError(f"gated_tcn expects [..., N, D, Q], got {H.shape}")
    lead, (c, q) = H.shape[:-2], H.shape[-2:]
    if c != params.channels:
        raise DimensionError(f"gated_tcn: {c} channels but kernels expect {params.channels}")
    q_out = q - delta * (max(params.widths) - 1)
    if q_out < 1:
        raise DimensionError(f"gated_tcn: length {q} too short for dilation {delta}")
    x = ad.reshape(H, (-1, c, q))
    f = _branch(x, params.filter_w, params.filter_b, params.widths, delta, q_out)
    g = _branch(x, params.gate_w, params.gate_b, params.widths, delta, q_out)
    out = ad.mul(ad.tanh(f), ad.sigmoid(g))
    return ad.reshape(out, lead + (out.shape[1], q_out))


def cta_field_plain(H, step_index: int, params: TcnParams, schedule: CtaSchedule) -> Tensor:
    """Padded gated convolution at the step's dilation (no graph propagation)."""
    delta = dilation_at(schedule.r, step_index)
    return pad_left_zero(gated_tcn(H, params, delta), schedule.R)


def residual_stack(H0, layer_params: Sequence[TcnParams], r, R: int, layer_fn=None) -> Tensor:
    """Discrete padded residual stack: H_{l+1} = H_l + pad(layer(H_l), R).

    ``layer_fn(h, params, l)`` defaults to the gated convolution at dilation
    ``floor(r ** l)``.
    """
    h = ad.as_tensor(H0)
    for l, p in enumerate(layer_params):
        if layer_fn is None:
            step = gated_tcn(h, p, dilation_at(r, l))
        else:
            step = layer_fn(h, p, l)
        h = ad.add(h, pad_left_zero(step, R))
    return h

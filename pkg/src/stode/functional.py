"""Differentiable structured operations over node/feature/time tensors.

Latent states are laid out as ``[..., N, D, Q]`` (optional leading batch
axis, then nodes, features, time).
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .autodiff import ContractError, DimensionError, Tensor, as_tensor

__all__ = [
    "propagate_nodes",
    "conv1d_dilated",
    "feature_map",
    "conv1x1",
    "pad_left_zero",
    "truncate_last",
    "take_last",
    "row_normalize",
]


def _flat(x: np.ndarray, keep: int) -> np.ndarray:
    # collapse all leading axes so that exactly ``keep`` trailing axes remain
    return x.reshape((-1,) + x.shape[x.ndim - keep:])


def propagate_nodes(A, H) -> Tensor:
    """out[..., n, d, q] = sum_m A[n, m] * H[..., m, d, q]."""
    A, H = as_tensor(A), as_tensor(H)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"propagate_nodes: A must be square, got {A.shape}")
    if H.ndim < 3 or H.shape[-3] != A.shape[0]:
        raise DimensionError(f"propagate_nodes: node axis of {H.shape} does not match {A.shape}")
    a, h = A.data, H.data

    def back(g):
        ga = np.einsum("bndq,bmdq->nm", _flat(g, 3), _flat(h, 3)) if A.requires_grad else None
        gh = np.einsum("nm,...ndq->...mdq", a, g) if H.requires_grad else None
        return ga, gh

    return Tensor._result(np.einsum("nm,...mdq->...ndq", a, h), (A, H), back)


def conv1d_dilated(H, W, b, dilation: int) -> Tensor:
    """Valid (unpadded) dilated cross-correlation over the last axis.

    H is ``[B, C_in, Q]``, W is ``[C_out, C_in, m]``, b is ``[C_out]``. The
    last kernel tap reads the newest slot, so output slot t sees inputs
    ``t, t + dilation, ..., t + dilation*(m-1)``.
    """
    H, W, b = as_tensor(H), as_tensor(W), as_tensor(b)
    dilation = int(dilation)
    if dilation < 1:
        raise ContractError("dilation must be a positive integer")
    if H.ndim != 3 or W.ndim != 3 or b.ndim != 1:
        raise DimensionError("conv1d_dilated expects H[B,C,Q], W[O,C,m], b[O]")
    if W.shape[1] != H.shape[1] or b.shape[0] != W.shape[0]:
        raise DimensionError(f"conv1d_dilated: channel mismatch H{H.shape} W{W.shape} b{b.shape}")
    m = W.shape[2]
    if H.shape[2] < 1 + dilation * (m - 1):
        raise DimensionError(
            f"conv1d_dilated: length {H.shape[2]} too short for kernel {m} at dilation {dilation}"
        )
    x = np.ascontiguousarray(H.data)
    w = np.ascontiguousarray(W.data)
    out = kernels.conv1d_forward(x, w, np.ascontiguousarray(b.data), dilation)

    def back(g):
        gx, gw, gb = kernels.conv1d_backward(np.ascontiguousarray(g), x, w, dilation)
        return gx, gw, gb

    return Tensor._result(np.asarray(out), (H, W, b), back)


def feature_map(H, Phi) -> Tensor:
    """Right-multiply the feature axis: out[..., e, q] = sum_d H[..., d, q] Phi[d, e]."""
    H, Phi = as_tensor(H), as_tensor(Phi)
    if Phi.ndim != 2 or H.ndim < 2 or H.shape[-2] != Phi.shape[0]:
        raise DimensionError(f"feature_map: {H.shape} vs {Phi.shape}")
    h, p = H.data, Phi.data

    def back(g):
        gh = np.einsum("...eq,de->...dq", g, p) if H.requires_grad else None
        gp = np.einsum("bdq,beq->de", _flat(h, 2), _flat(g, 2)) if Phi.requires_grad else None
        return gh, gp

    return Tensor._result(np.einsum("...dq,de->...eq", h, p), (H, Phi), back)


def conv1x1(H, W, b) -> Tensor:
    """Channel mixing with bias: out[..., o, q] = sum_c W[o, c] H[..., c, q] + b[o]."""
    H, W, b = as_tensor(H), as_tensor(W), as_tensor(b)
    if W.ndim != 2 or H.shape[-2] != W.shape[1] or b.shape != (W.shape[0],):
        raise DimensionError(f"conv1x1: H{H.shape} W{W.shape} b{b.shape}")
    h, w = H.data, W.data

    def back(g):
        gh = np.einsum("...oq,oc->...cq", g, w) if H.requires_grad else None
        gw = np.einsum("boq,bcq->oc", _flat(g, 2), _flat(h, 2)) if W.requires_grad else None
        gb = g.sum(axis=tuple(i for i in range(g.ndim) if i != g.ndim - 2)) if b.requires_grad else None
        return gh, gw, gb

    out = np.einsum("oc,...cq->...oq", w, h) + b.data[:, None]
    return Tensor._result(out, (H, W, b), back)


def pad_left_zero(H, length: int) -> Tensor:
    """Prepend zero slots on the time axis up to ``length``."""
    H = as_tensor(H)
    q = H.shape[-1]
    if q > length:
        raise DimensionError(f"pad_left_zero: length {q} exceeds target {length}")
    if q == length:
        return H
    widths = [(0, 0)] * (H.ndim - 1) + [(length - q, 0)]
    return Tensor._result(np.pad(H.data, widths), (H,), lambda g: (g[..., length - q:],))


def truncate_last(H, length: int) -> Tensor:
    """Keep the trailing ``length`` slots of the time axis."""
    H = as_tensor(H)
    q = H.shape[-1]
    if length > q or length < 1:
        raise DimensionError(f"truncate_last: cannot keep {length} of {q} slots")
    if length == q:
        return H
    shape = H.shape

    def back(g):
        out = np.zeros(shape)
        out[..., q - length:] = g
        return (out,)

    return Tensor._result(H.data[..., q - length:].copy(), (H,), back)


def take_last(H) -> Tensor:
    """Drop the time axis, keeping the newest slot."""
    H = as_tensor(H)
    shape = H.shape

    def back(g):
        out = np.zeros(shape)
        out[..., -1] = g
        return (out,)

    return Tensor._result(H.data[..., -1].copy(), (H,), back)


def row_normalize(A) -> Tensor:
    """(A + I) scaled so each row sums to one."""
    A = as_tensor(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"row_normalize: A must be square, got {A.shape}")
    a = A.data + np.eye(A.shape[0])
    s = a.sum(axis=1, keepdims=True)
    out = a / s

    def back(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        return ((g - inner) / s,)

    return Tensor._result(out, (A,), back)

"""Numpy reference kernels for valid dilated 1-d cross-correlation."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _taps(x, m, dilation):
    # (B, C_in, Q_out, m) view: taps[b, c, t, j] = x[b, c, t + j*dilation]
    span = dilation * (m - 1) + 1
    return sliding_window_view(x, span, axis=2)[..., ::dilation]


def conv1d_forward(x, w, b, dilation):
    taps = _taps(x, w.shape[2], dilation)
    out = np.tensordot(taps, w, axes=([1, 3], [1, 2]))  # (B, Q_out, C_out)
    out = out.transpose(0, 2, 1) + b[None, :, None]
    return np.ascontiguousarray(out)


def conv1d_backward(g, x, w, dilation):
    m = w.shape[2]
    q_out = g.shape[2]
    taps = _taps(x, m, dilation)
    gw = np.tensordot(g, taps, axes=([0, 2], [0, 2]))  # (C_out, C_in, m)
    gb = g.sum(axis=(0, 2))
    proj = np.tensordot(g, w, axes=([1], [0]))  # (B, Q_out, C_in, m)
    gx = np.zeros_like(x)
    for j in range(m):
        s = j * dilation
        gx[:, :, s:s + q_out] += proj[:, :, :, j].transpose(0, 2, 1)
    return gx, gw, gb

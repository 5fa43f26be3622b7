"""Hot convolution kernels.

The compiled extension is used when it was built and ``STODE_PURE_PYTHON``
is unset; otherwise the numpy implementation is selected.  Both expose
``conv1d_forward(x, w, b, dilation)`` and ``conv1d_backward(g, x, w, dilation)``
on C-contiguous float64 arrays.
"""
import os
from contextlib import contextmanager

from . import _conv_py as python_backend

try:
    from . import _conv as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

if compiled_backend is not None and not os.environ.get("STODE_PURE_PYTHON"):
    backend = compiled_backend
    BACKEND = "compiled"
else:
    backend = python_backend
    BACKEND = "python"

conv1d_forward = backend.conv1d_forward
conv1d_backward = backend.conv1d_backward



@contextmanager
def use_backend(name: str):
    """Temporarily route the kernels through "compiled" or "python"."""
    global backend, BACKEND, conv1d_forward, conv1d_backward
    chosen = {"compiled": compiled_backend, "python": python_backend}.get(name)
    if chosen is None:
        raise RuntimeError(f"kernel backend {name!r} is not available")
    saved = backend, BACKEND
    backend, BACKEND = chosen, name
    conv1d_forward, conv1d_backward = chosen.conv1d_forward, chosen.conv1d_backward
    try:
        yield chosen
    finally:
        backend, BACKEND = saved
        conv1d_forward, conv1d_backward = backend.conv1d_forward, backend.conv1d_backward


__all__ = ["BACKEND", "backend", "compiled_backend", "python_backend", "conv1d_forward",
           "conv1d_backward", "use_backend"]

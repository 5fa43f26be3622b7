"""Fixed-step explicit integrators (Euler, classical RK4).

Fields are called as ``field(state, step_index)``; the step index, not the
continuous time, is passed so that step-scheduled quantities (the temporal
dilation) stay constant across the stages of one RK4 step. Gradients flow
through the unrolled steps.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .autodiff import ContractError, DimensionError

__all__ = ["SolverSpec", "integrate", "integrate_trajectory"]

METHODS = ("euler", "rk4")


@dataclass(frozen=True)
class SolverSpec:
    method: str = "euler"
    terminal_time: float = 1.0
    step_size: float = 1.0

    def __post_init__(self):
        method = self.method.lower()
        if method not in METHODS:
            raise ContractError(f"unknown solver method {self.method!r}")
        object.__setattr__(self, "method", method)
        if self.terminal_time <= 0 or self.step_size <= 0:
            raise ContractError("terminal_time and step_size must be positive")
        if self.step_size > self.terminal_time * (1 + 1e-12):
            raise ContractError("step_size exceeds terminal_time")
        ratio = self.terminal_time / self.step_size
        if abs(ratio - round(ratio)) > 1e-9:
            raise ContractError(
                f"terminal_time/step_size = {ratio!r} is not an integer step count"
            )

    @property
    def steps(self) -> int:
        return int(round(self.terminal_time / self.step_size))

    @classmethod
    def from_steps(cls, method: str, terminal_time: float, steps: int) -> "SolverSpec":
        return cls(method, terminal_time, terminal_time / steps)


def _checked(field, state, k):
    out = field(state, k)
    if tuple(out.shape) != tuple(state.shape):
        raise DimensionError(f"vector field changed state shape {state.shape} -> {out.shape}")
    return out


def _step(field, h, k, dt, method):
    if method == "euler":
        return h + dt * _checked(field, h, k)
    k1 = _checked(field, h, k)
    k2 = _checked(field, h + (0.5 * dt) * k1, k)
    k3 = _checked(field, h + (0.5 * dt) * k2, k)
    k4 = _checked(field, h + dt * k3, k)
    return h + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_trajectory(field: Callable, H0, spec: SolverSpec) -> list:
    """States at t = i*step_size for i = 0..K (element 0 is ``H0`` itself)."""
    states = [H0]
    h = H0
    for k in range(spec.steps):
        h = _step(field, h, k, spec.step_size, spec.method)
        states.append(h)
    return states


def integrate(field: Callable, H0, spec: SolverSpec):
    """State at ``spec.terminal_time``; works on Tensors or plain ndarrays."""
    return integrate_trajectory(field, H0, spec)[-1]


def num_steps(terminal_time: float, step_size: float) -> int:
    return SolverSpec("euler", terminal_time, step_size).steps


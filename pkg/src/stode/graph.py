"""Graph structure learning and continuous graph propagation.

The learned adjacency is built from two node-embedding branches whose
antisymmetric product makes every learned edge one-directional. Propagation
follows the diffusion ODE dH/dt = (A_hat - I) H, whose closed form
``exp(-t L) H0`` (with ``L = I - A_hat``) is available as a test oracle for
symmetric graphs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DimensionError, Tensor, as_tensor
from .functional import feature_map, propagate_nodes, row_normalize
from .solver import SolverSpec, integrate_trajectory

__all__ = [
    "GraphLearnerParams",
    "learn_adjacency",
    "sparsify_topk",
    "normalize_adjacency",
    "cgp_field",
    "cgp_trajectory",
    "cgp_solve_attentive",
    "attentive_readout",
    "symmetric_normalize",
    "heat_kernel_oracle",
    "euler_error_bound",
    "random_row_stochastic",
]

# largest float64 strictly below one
_BELOW_ONE = float(np.nextafter(1.0, 0.0))


@dataclass
class GraphLearnerParams:
    E1: Tensor
    E2: Tensor
    G1: Tensor
    G2: Tensor
    beta: float = 3.0

    def __post_init__(self):
        n, d = self.E1.shape
        if n < 2 or d < 1:
            raise ContractError("graph learner needs N >= 2 nodes and embedding dim >= 1")
        if self.E2.shape != (n, d) or self.G1.shape != (d, d) or self.G2.shape != (d, d):
            raise DimensionError("graph learner tensor shapes are inconsistent")
        if self.beta < 0:
            raise ContractError("beta must be non-negative")

    @classmethod
    def init(cls, num_nodes: int, dim: int, rng: np.random.Generator, beta: float = 3.0,
             embed_scale: float = 1.0):
        bound = 1.0 / math.sqrt(dim)
        return cls(
            E1=Tensor(embed_scale * rng.standard_normal((num_nodes, dim)), requires_grad=True, name="E1"),
            E2=Tensor(embed_scale * rng.standard_normal((num_nodes, dim)), requires_grad=True, name="E2"),
            G1=Tensor(rng.uniform(-bound, bound, (dim, dim)), requires_grad=True, name="G1"),
            G2=Tensor(rng.uniform(-bound, bound, (dim, dim)), requires_grad=True, name="G2"),
            beta=float(beta),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {"E1": self.E1, "E2": self.E2, "G1": self.G1, "G2": self.G2}


def _saturate(x: Tensor) -> Tensor:
    # tanh rounds to exactly 1.0 beyond |x| ~ 19; clamp to keep the open range
    y = np.clip(np.tanh(x.data), -_BELOW_ONE, _BELOW_ONE)
    return Tensor._result(y, (x,), lambda g: (g * (1.0 - y * y),))


def learn_adjacency(params: GraphLearnerParams) -> Tensor:
    """A = relu(tanh(beta (M1 M2^T - M2 M1^T))), M_k = tanh(beta E_k G_k)."""
    b = params.beta
    m1 = ad.tanh(ad.scale(ad.matmul(params.E1, params.G1), b))
    m2 = ad.tanh(ad.scale(ad.matmul(params.E2, params.G2), b))
    p = ad.matmul(m1, ad.transpose(m2))
    # P - P^T equals M1 M2^T - M2 M1^T and is antisymmetric bit for bit
    return ad.relu(_saturate(ad.scale(ad.sub(p, ad.transpose(p)), b)))


def sparsify_topk(A, k: int) -> Tensor:
    """Keep the k largest entries of each row (ties go to the lower column)."""
    A = as_tensor(A)
    n = A.shape[1]
    if k < 1 or k > n:
        raise ContractError(f"top-k needs 1 <= k <= {n}, got {k}")
    if k == n:
        return A
    order = np.argsort(-A.data, axis=1, kind="stable")[:, :k]
    keep = np.zeros(A.shape)
    np.put_along_axis(keep, order, 1.0, axis=1)
    return ad.mask(A, keep)


def normalize_adjacency(A) -> Tensor:
    """Add self-loops, then divide each row by its sum."""
    A = as_tensor(A)
    if np.any(A.data < 0):
        raise ContractError("adjacency must be non-negative")
    return row_normalize(A)


def cgp_field(H, A_hat) -> Tensor:
    """(A_hat - I) H, i.e. -L H."""
    return ad.sub(propagate_nodes(A_hat, H), H)


def cgp_trajectory(H0, A_hat, spec: SolverSpec) -> list:
    return integrate_trajectory(lambda h, _k: cgp_field(h, A_hat), H0, spec)


def attentive_readout(states, Phi) -> Tensor:
    """sum_i states[i] @ Phi[i] on the feature axis."""
    if len(states) != len(Phi):
        raise ContractError(f"need one map per state: {len(states)} states, {len(Phi)} maps")
    out = feature_map(states[0], Phi[0])
    for h, p in zip(states[1:], Phi[1:]):
        out = ad.add(out, feature_map(h, p))
    return out


def cgp_solve_attentive(H0, A_hat, spec: SolverSpec, Phi) -> Tensor:
    if len(Phi) != spec.steps + 1:
        raise ContractError(f"expected {spec.steps + 1} attentive maps, got {len(Phi)}")
    return attentive_readout(cgp_trajectory(as_tensor(H0), A_hat, spec), Phi)


def symmetric_normalize(A) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2 for a symmetric non-negative A (oracle path only)."""
    a = np.asarray(A.data if isinstance(A, Tensor) else A, dtype=np.float64)
    a = a + np.eye(a.shape[0])
    d = 1.0 / np.sqrt(a.sum(axis=1))
    return d[:, None] * a * d[None, :]


def heat_kernel_oracle(A_hat_sym, t: float, H0) -> np.ndarray:
    """exp(-t L) H0 via the eigendecomposition of L = I - A_hat (symmetric only)."""
    a = np.asarray(A_hat_sym.data if isinstance(A_hat_sym, Tensor) else A_hat_sym, dtype=np.float64)
    h = np.asarray(H0.data if isinstance(H0, Tensor) else H0, dtype=np.float64)
    if t < 0:
        raise ContractError("heat kernel time must be non-negative")
    lap = np.eye(a.shape[0]) - a
    if not np.allclose(lap, lap.T, rtol=0.0, atol=1e-12):
        raise ContractError("heat kernel oracle requires a symmetric Laplacian")
    lam, U = np.linalg.eigh(lap)
    kernel = (U * np.exp(-t * lam)) @ U.T
    return np.einsum("nm,...mdq->...ndq", kernel, h)


def euler_error_bound(T: float, L_norm: float, H0_norm: float, K: int) -> float:
    """(T |L| |H0| / 2K) (exp(T |L|) - 1)."""
    return T * L_norm * H0_norm / (2.0 * K) * math.expm1(T * L_norm)


def random_row_stochastic(n: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.random((n, n))
    return a / a.sum(axis=1, keepdims=True)

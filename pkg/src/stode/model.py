"""Continuous spatial-temporal encoder, decoder and ablation variants.

The exterior (temporal) ODE runs on the receptive-field-padded latent state.
Its vector field applies the gated dilated convolution, then solves the
interior (graph) ODE from that output and reads the trajectory out through
the attentive maps, and finally pads back to the receptive field.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DimensionError, Tensor
from .functional import conv1x1, feature_map, pad_left_zero, propagate_nodes, take_last
from .graph import (
    GraphLearnerParams,
    attentive_readout,
    cgp_trajectory,
    learn_adjacency,
    normalize_adjacency,
    random_row_stochastic,
    sparsify_topk,
)
from .solver import SolverSpec, integrate
from .temporal import (
    DEFAULT_WIDTHS,
    TcnParams,
    dilation_at,
    gated_tcn,
    informative_length,
    receptive_field,
)

__all__ = ["ModelConfig", "Forecaster", "build_variant", "tie_discrete_to", "loss_mae", "ABLATION_FLAGS"]

ABLATION_FLAGS = ("no_cgp", "no_cta", "no_gsl", "no_attn", "fully_discrete")

# flag sets that correspond to a studied variant
_ALLOWED_VARIANTS = {
    frozenset(),
    frozenset({"no_gsl"}),
    frozenset({"no_cta"}),
    frozenset({"no_cgp"}),
    frozenset({"no_cgp", "no_attn"}),
    frozenset({"no_attn"}),
    frozenset({"fully_discrete"}),
    frozenset({"fully_discrete", "no_attn"}),
}


@dataclass
class ModelConfig:
    num_nodes: int
    seq_len: int
    in_dim: int = 1
    hidden_dim: int = 16
    horizon: int = 1
    mode: str = "single"
    dilation: int = 1
    widths: tuple = DEFAULT_WIDTHS
    cta_method: str = "euler"
    cta_time: float = 1.0
    cta_step: float = 0.25
    cgp_method: str = "euler"
    cgp_time: float = 1.0
    cgp_step: float = 0.5
    topk: int = 20
    beta: float = 3.0
    embed_dim: int = 16
    embed_scale: float = 0.1
    dropout: float = 0.3
    decoder_dim: int = 32
    no_cgp: bool = False
    no_cta: bool = False
    no_gsl: bool = False
    no_attn: bool = False
    fully_discrete: bool = False
    seed: int = 0

    def __post_init__(self):
        self.widths = tuple(int(m) for m in self.widths)
        if self.mode not in ("single", "multi"):
            raise ContractError(f"mode must be 'single' or 'multi', got {self.mode!r}")
        if self.hidden_dim % len(self.widths):
            raise ContractError("hidden_dim must be divisible by the number of kernel widths")
        flags = frozenset(f for f in ABLATION_FLAGS if getattr(self, f))
        if flags not in _ALLOWED_VARIANTS:
            raise ContractError(f"contradictory or unsupported ablation flags: {sorted(flags)}")
        for spec in (self.cta_spec, self.cgp_spec):  # raises on non-integer step counts
            spec.steps
        if self.receptive_field <= self.seq_len:
            raise ContractError(
                f"receptive field {self.receptive_field} must exceed input length {self.seq_len}"
            )

    @property
    def cta_spec(self) -> SolverSpec:
        return SolverSpec(self.cta_method, self.cta_time, self.cta_step)

    @property
    def cgp_spec(self) -> SolverSpec:
        return SolverSpec(self.cgp_method, self.cgp_time, self.cgp_step)

    @property
    def receptive_field(self) -> int:
        return receptive_field(self.dilation, max(self.widths), self.cta_spec.steps)

    @property
    def discrete_temporal(self) -> bool:
        return self.no_cta or self.fully_discrete

    @property
    def discrete_spatial(self) -> bool:
        return self.no_cgp or self.fully_discrete

    @property
    def out_dim(self) -> int:
        return self.in_dim * (self.horizon if self.mode == "multi" else 1)

    @property
    def variant(self) -> str:
        flags = [f for f in ABLATION_FLAGS if getattr(self, f)]
        return "+".join(flags) if flags else "full"

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ContractError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def loss_mae(pred, target) -> Tensor:
    pred, target = ad.as_tensor(pred), ad.as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"loss_mae: shape mismatch {pred.shape} vs {target.shape}")
    return ad.mean(ad.absolute(ad.sub(pred, target)))


def _param(arr, name) -> Tensor:
    return Tensor(arr, requires_grad=True, name=name)


class Forecaster:
    """Encoder + decoder with all trainable tensors and the dropout generator."""

    def __init__(self, config: ModelConfig):
        self.config = config
        c = config
        rng = np.random.default_rng(c.seed)
        dp, k_cta, k_cgp = c.hidden_dim, c.cta_spec.steps, c.cgp_spec.steps

        b = 1.0 / math.sqrt(c.in_dim)
        self.start_w = _param(rng.uniform(-b, b, (dp, c.in_dim)), "start.w")
        self.start_b = _param(rng.uniform(-b, b, dp), "start.b")
        self.graph = GraphLearnerParams.init(c.num_nodes, c.embed_dim, rng, c.beta, c.embed_scale)
        if c.discrete_temporal:
            self.tcn_layers = [TcnParams.init(dp, c.widths, rng) for _ in range(k_cta)]
        else:
            self.tcn_layers = [TcnParams.init(dp, c.widths, rng)]
        if c.no_attn:
            self.phi = [_param(np.eye(dp), "phi.0")]
        else:
            self.phi = [_param(np.eye(dp) / (k_cgp + 1), f"phi.{i}") for i in range(k_cgp + 1)]
        b = 1.0 / math.sqrt(dp)
        self.dec_w1 = _param(rng.uniform(-b, b, (c.decoder_dim, dp)), "dec.w1")
        self.dec_b1 = _param(rng.uniform(-b, b, c.decoder_dim), "dec.b1")
        b = 1.0 / math.sqrt(c.decoder_dim)
        self.dec_w2 = _param(rng.uniform(-b, b, (c.out_dim, c.decoder_dim)), "dec.w2")
        self.dec_b2 = _param(rng.uniform(-b, b, c.out_dim), "dec.b2")
        # drawn from a separate stream so enabling no_gsl leaves other inits unchanged
        self.fixed_adjacency = random_row_stochastic(
            c.num_nodes, np.random.default_rng([c.seed, 1])
        )
        self.dropout_rng = np.random.default_rng([c.seed, 2])

    # -- parameter bookkeeping -----------------------------------------------
    @property
    def tcn(self) -> TcnParams:
        return self.tcn_layers[0]

    def parameter_groups(self) -> dict[str, dict[str, Tensor]]:
        theta = {}
        for l, p in enumerate(self.tcn_layers):
            prefix = f"tcn.{l}." if self.config.discrete_temporal else "tcn."
            theta.update({prefix + k: v for k, v in p.tensors().items()})
        return {
            "theta": theta,
            "phi": {f"phi.{i}": p for i, p in enumerate(self.phi)},
            "gamma_sc": {"start.w": self.start_w, "start.b": self.start_b},
            "gamma_gc": {f"graph.{k}": v for k, v in self.graph.tensors().items()},
            "gamma_dc": {
                "dec.w1": self.dec_w1,
                "dec.b1": self.dec_b1,
                "dec.w2": self.dec_w2,
                "dec.b2": self.dec_b2,
            },
        }

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for group in self.parameter_groups().values():
            out.update(group)
        return out

    def count_parameters(self) -> dict[str, int]:
        counts = {g: sum(t.size for t in ps.values()) for g, ps in self.parameter_groups().items()}
        counts["total"] = sum(counts.values())
        return counts

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    # -- forward pieces ------------------------------------------------------
    def adjacency(self) -> Tensor:
        """Normalized propagation matrix for this forward pass."""
        if self.config.no_gsl:
            return Tensor(self.fixed_adjacency)
        return normalize_adjacency(self.learned_adjacency())

    def learned_adjacency(self) -> Tensor:
        A = learn_adjacency(self.graph)
        return sparsify_topk(A, min(self.config.topk, self.config.num_nodes))

    def _spatial(self, h: Tensor, A_hat: Tensor) -> Tensor:
        c = self.config
        if c.discrete_spatial:
            states = [h]
            for _ in range(c.cgp_spec.steps):
                states.append(propagate_nodes(A_hat, states[-1]))
        else:
            states = cgp_trajectory(h, A_hat, c.cgp_spec)
        if c.no_attn:
            return feature_map(states[-1], self.phi[0])
        return attentive_readout(states, self.phi)

    def _temporal_step(self, h, tcn: TcnParams, delta: int, A_hat, training: bool) -> Tensor:
        z = gated_tcn(h, tcn, delta)
        z = ad.dropout(z, self.config.dropout, self.dropout_rng, training)
        z = self._spatial(z, A_hat)
        return pad_left_zero(z, self.config.receptive_field)

    def initial_state(self, X) -> Tensor:
        R = self.config.receptive_field
        return conv1x1(pad_left_zero(X, R), self.start_w, self.start_b)

    def _check_input(self, X) -> Tensor:
        X = ad.as_tensor(X)
        c = self.config
        if X.ndim == 3:
            X = ad.reshape(X, (1,) + X.shape)
        if X.ndim != 4 or X.shape[1:] != (c.num_nodes, c.in_dim, c.seq_len):
            raise DimensionError(
                f"input must be [B, {c.num_nodes}, {c.in_dim}, {c.seq_len}], got {X.shape}"
            )
        return X

    def encode_state(self, X, training: bool = False) -> Tensor:
        """Terminal exterior state, shape [B, N, D', R]."""
        c = self.config
        X = self._check_input(X)
        A_hat = self.adjacency()
        h0 = self.initial_state(X)
        r = c.dilation
        if informative_length(c.receptive_field, c.widths, r, c.cta_spec.steps) < 1:
            raise ContractError("informative length underflows before the last step")
        if c.discrete_temporal:
            h = h0
            for l, tcn in enumerate(self.tcn_layers):
                h = ad.add(h, self._temporal_step(h, tcn, dilation_at(r, l), A_hat, training))
            return h

        def field(h, k):
            return self._temporal_step(h, self.tcn, dilation_at(r, k), A_hat, training)

        return integrate(field, h0, c.cta_spec)

    def encode(self, X, training: bool = False) -> Tensor:
        """[B, N, D, T] window -> [B, N, D'] representation."""
        return take_last(self.encode_state(X, training))

    def decode(self, H_out) -> Tensor:
        c = self.config
        H_out = ad.as_tensor(H_out)
        if H_out.ndim != 3 or H_out.shape[1:] != (c.num_nodes, c.hidden_dim):
            raise DimensionError(f"decode expects [B, N, {c.hidden_dim}], got {H_out.shape}")
        h = ad.reshape(H_out, H_out.shape + (1,))
        h = ad.relu(conv1x1(h, self.dec_w1, self.dec_b1))
        h = conv1x1(h, self.dec_w2, self.dec_b2)
        bsz = H_out.shape[0]
        if c.mode == "multi":
            return ad.reshape(h, (bsz, c.num_nodes, c.in_dim, c.horizon))
        return ad.reshape(h, (bsz, c.num_nodes, c.in_dim))

    def forward(self, X, training: bool = False) -> Tensor:
        return self.decode(self.encode(X, training))

    __call__ = forward

    def predict(self, X) -> np.ndarray:
        with ad.no_grad():
            return self.forward(X, training=False).data


def build_variant(config: ModelConfig, **flags) -> Forecaster:
    """Model for ``config`` with ablation flags overridden by ``flags``."""
    unknown = set(flags) - set(ABLATION_FLAGS)
    if unknown:
        raise ContractError(f"unknown ablation flags: {sorted(unknown)}")
    return Forecaster(dataclasses.replace(config, **flags))


def tie_discrete_to(discrete: Forecaster, source: Forecaster) -> None:
    """Copy ``source``'s parameters into ``discrete``, repeating its single Θ per layer."""
    src = source.parameters()
    for name, t in discrete.parameters().items():
        if name.startswith("tcn.") and name.count(".") == 2:
            key = "tcn." + name.split(".", 2)[2]
        else:
            key = name
        t.data[...] = src[key].data
    discrete.fixed_adjacency = source.fixed_adjacency.copy()

"""Numerical verification suites run by ``stode verify``.

Each check builds seeded random instances, measures a quantity against an
independent oracle (matrix powers, the heat kernel, a loop-based reference
convolution, finite differences) and reports it next to its tolerance.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import (
    GraphLearnerParams,
    cgp_field,
    cgp_solve_attentive,
    euler_error_bound,
    heat_kernel_oracle,
    learn_adjacency,
    normalize_adjacency,
    symmetric_normalize,
)
from .model import Forecaster, ModelConfig, loss_mae
from .solver import SolverSpec, integrate
from .temporal import (
    CtaSchedule,
    TcnParams,
    cta_field_plain,
    dilation_at,
    receptive_field,
)

__all__ = ["CheckResult", "SUITES", "run_suite", "random_symmetric_graph", "ring_graph",
           "reference_gated_tcn", "cross_node_variance", "finite_difference_check"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: object
    tolerance: str
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: measured={_fmt(self.measured)} tolerance={self.tolerance} ({self.seconds:.2f}s)"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["measured"] = _jsonable(self.measured)
        return d


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.6g}"
    if isinstance(x, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in x) + "]"
    return str(x)


def _jsonable(x):
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


# -- instance generators -------------------------------------------------------
def random_symmetric_graph(rng: np.random.Generator, n: int, density: float = 0.5) -> np.ndarray:
    """Connected unweighted symmetric adjacency (a path backbone plus random edges)."""
    a = np.triu((rng.random((n, n)) < density).astype(float), 1)
    perm = rng.permutation(n)
    a[perm[:-1], perm[1:]] = 1.0
    a = np.triu(a + a.T, 1)
    return a + a.T


def ring_graph(n: int) -> np.ndarray:
    a = np.zeros((n, n))
    idx = np.arange(n)
    a[idx, (idx + 1) % n] = 1.0
    a[(idx + 1) % n, idx] = 1.0
    return a


def cross_node_variance(H: np.ndarray) -> float:
    """Variance across the node axis (-3), averaged over the remaining entries."""
    return float(np.var(H, axis=-3).mean())


def reference_gated_tcn(x: np.ndarray, params: TcnParams, delta: int) -> np.ndarray:
    """Loop-based gated multi-width convolution on an [N, C, Q] array."""
    n, c, q = x.shape
    q_out = q - delta * (max(params.widths) - 1)

    def branch(ws, bs):
        outs = []
        for w, b in zip(ws, bs):
            w, b = w.data, b.data
            m = w.shape[2]
            length = q - delta * (m - 1)
            out = np.zeros((n, w.shape[0], length))
            for t in range(length):
                for j in range(m):
                    out[:, :, t] += x[:, :, t + j * delta] @ w[:, :, j].T
            out += b[None, :, None]
            outs.append(out[:, :, length - q_out:])
        return np.concatenate(outs, axis=1)

    f = branch(params.filter_w, params.filter_b)
    g = branch(params.gate_w, params.gate_b)
    return np.tanh(f) / (1.0 + np.exp(-g))


def finite_difference_check(loss_fn, params: dict[str, Tensor], h: float = 1e-5) -> dict[str, float]:
    """Relative error per tensor between backprop and central differences.

    ``loss_fn()`` must rebuild the loss from the current parameter values.
    """
    for p in params.values():
        p.zero_grad()
    loss_fn().backward()
    out = {}
    for name, p in params.items():
        analytic = p.grad.copy()
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            with ad.no_grad():
                up = loss_fn().item()
            flat[i] = orig - h
            with ad.no_grad():
                down = loss_fn().item()
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2 * h)
        scale = max(np.linalg.norm(numeric), np.linalg.norm(analytic), 1e-12)
        out[name] = float(np.linalg.norm(analytic - numeric) / scale)
    return out


# -- checks ------------------------------------------------------------------------
def _timed(fn):
    def wrapper(*a, **k):
        t0 = time.perf_counter()
        res = fn(*a, **k)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    return wrapper


@_timed
def check_cgp_discrete(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for K in (1, 2, 4, 8):
        for _ in range(5):
            n = int(rng.integers(2, 9))
            A = rng.random((n, n)) * (rng.random((n, n)) < 0.6)
            np.fill_diagonal(A, 0.0)
            A_hat = normalize_adjacency(A).data
            h0 = rng.standard_normal((n, 3, 4))
            d = h0.shape[1]
            phi = [Tensor(np.zeros((d, d))) for _ in range(K)] + [Tensor(np.eye(d))]
            out = cgp_solve_attentive(Tensor(h0), Tensor(A_hat), SolverSpec("euler", K, 1.0), phi)
            expect = np.einsum("nm,mdq->ndq", np.linalg.matrix_power(A_hat, K), h0)
            worst = max(worst, float(np.abs(out.data - expect).max()))
    return CheckResult("cgp.discrete_equivalence", worst <= 1e-9, worst, "max-abs <= 1e-9")


def _convergence_errors(method: str, Ks, seeds=range(5)) -> np.ndarray:
    errs = np.zeros((len(seeds), len(Ks)))
    for si, seed in enumerate(seeds):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 9))
        A_hat = symmetric_normalize(random_symmetric_graph(rng, n))
        h0 = rng.standard_normal((n, 3, 2))
        ref = heat_kernel_oracle(A_hat, 1.0, h0)
        for ki, K in enumerate(Ks):
            spec = SolverSpec.from_steps(method, 1.0, K)
            out = integrate(lambda h, _k: cgp_field(h, A_hat), Tensor(h0), spec)
            errs[si, ki] = np.abs(out.data - ref).max()
    return errs


@_timed
def check_cgp_convergence_euler() -> CheckResult:
    errs = _convergence_errors("euler", (4, 8, 16, 32))
    ratios = errs[:, :-1] / errs[:, 1:]
    ok = bool(np.all(np.diff(errs, axis=1) < 0) and np.all(np.abs(ratios - 2.0) <= 0.2))
    return CheckResult("cgp.convergence_euler", ok, [float(ratios.min()), float(ratios.max())],
                       "errors decrease; ratio 2 +/- 0.2 over K=4,8,16,32")


@_timed
def check_cgp_convergence_rk4() -> CheckResult:
    errs = _convergence_errors("rk4", (2, 4, 8))
    ratios = errs[:, :-1] / errs[:, 1:]
    ok = bool(np.all(np.diff(errs, axis=1) < 0) and np.all(np.abs(ratios - 16.0) <= 3.0))
    return CheckResult("cgp.convergence_rk4", ok, [float(v) for v in ratios.mean(axis=0)],
                       "ratio 16 +/- 3 over K=2,4,8")


@_timed
def check_graph_structure(draws: int = 100) -> CheckResult:
    bad = 0
    for seed in range(draws):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 12))
        d = int(rng.integers(1, 33))
        params = GraphLearnerParams.init(n, d, rng, beta=float(rng.uniform(0.5, 6.0)))
        A = learn_adjacency(params).data
        ok = (
            np.all(np.diag(A) == 0)
            and np.all(A >= 0)
            and np.all(A < 1)
            and np.all(A * A.T == 0)
        )
        bad += not ok
    return CheckResult("graph.structure", bad == 0, bad, f"0 violations over {draws} draws")


@_timed
def check_cta_discrete(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for K in (1, 2, 3):
        for r in (1, 2):
            sched = CtaSchedule(r, SolverSpec("euler", K, 1.0), widths=(2, 3))
            params = TcnParams.init(4, (2, 3), rng)
            h0 = rng.standard_normal((3, 4, sched.R))
            out = integrate(lambda h, k: cta_field_plain(h, k, params, sched), Tensor(h0), sched.spec)
            ref = h0.copy()
            for l in range(K):
                z = reference_gated_tcn(ref, params, dilation_at(r, l))
                ref = ref + np.concatenate([np.zeros(ref.shape[:2] + (sched.R - z.shape[2],)), z], axis=2)
            worst = max(worst, float(np.abs(out.data - ref).max()))
    return CheckResult("cta.discrete_equivalence", worst <= 1e-9, worst, "max-abs <= 1e-9")


def informative_slots(params: TcnParams, sched: CtaSchedule, seed: int = 0) -> int:
    """Number of terminal slots whose input dependence spans the whole receptive field."""
    rng = np.random.default_rng(seed)
    R = sched.R
    count = 0
    for j in range(R):
        h0 = Tensor(rng.standard_normal((1, params.channels, R)), requires_grad=True)
        out = integrate(lambda h, k: cta_field_plain(h, k, params, sched), h0, sched.spec)
        ad.total(out[..., j]).backward()
        support = np.abs(h0.grad).sum(axis=(0, 1)) > 0
        count += bool(support.all())
    return count


@_timed
def check_receptive_field() -> CheckResult:
    values = [receptive_field(1, 2, 5), receptive_field(2, 2, 5), receptive_field(2, 7, 3)]
    slots = []
    rng = np.random.default_rng(3)
    for r, widths, K in ((1, (2,), 5), (2, (2,), 5), (2, (2, 7), 3)):
        sched = CtaSchedule(r, SolverSpec("euler", 1.0, 1.0 / K), widths=widths)
        params = TcnParams.init(len(widths), widths, rng)
        slots.append(informative_slots(params, sched))
    ok = values == [6, 32, 43] and slots == [1, 1, 1]
    return CheckResult("cta.receptive_field", ok, values + slots,
                       "R = 6, 32, 43 and exactly 1 informative slot each")


def tiny_model(seed: int = 0, **overrides) -> Forecaster:
    cfg = dict(num_nodes=3, in_dim=1, hidden_dim=4, seq_len=4, cta_time=1.0, cta_step=0.5,
               cgp_time=1.0, cgp_step=0.5, embed_dim=3, embed_scale=1.0, decoder_dim=5,
               dropout=0.0, seed=seed)
    cfg.update(overrides)
    return Forecaster(ModelConfig(**cfg))


@_timed
def check_gradients(seed: int = 0) -> CheckResult:
    model = tiny_model(seed)
    rng = np.random.default_rng(seed + 100)
    X = rng.standard_normal((2, 3, 1, 4))
    Y = rng.standard_normal((2, 3, 1)) + 3.0

    def loss_fn():
        return loss_mae(model.forward(X), Y)

    worst = {}
    for group, params in model.parameter_groups().items():
        errs = finite_difference_check(loss_fn, params)
        worst[group] = max(errs.values())
    ok = all(v <= 1e-3 for v in worst.values())
    return CheckResult("gradients.end_to_end", ok, [f"{k}={v:.2e}" for k, v in worst.items()],
                       "relative <= 1e-3 per group")


@_timed
def check_oversmoothing(n: int = 8, depth: int = 64) -> CheckResult:
    rng = np.random.default_rng(0)
    A_hat = symmetric_normalize(ring_graph(n))
    h0 = rng.standard_normal((n, 3, 2))
    v0 = cross_node_variance(h0)
    field = lambda h, _k: cgp_field(h, A_hat)  # noqa: E731
    coupled = integrate(field, Tensor(h0), SolverSpec("euler", depth, 1.0)).data
    fixed = integrate(field, Tensor(h0), SolverSpec.from_steps("euler", 1.0, depth)).data
    collapse = cross_node_variance(coupled) / v0
    retained = cross_node_variance(fixed) / v0
    gap = float(np.abs(fixed - heat_kernel_oracle(A_hat, 1.0, h0)).max())
    ok = collapse < 1e-3 and retained > 0.1 and gap < 1e-2
    return CheckResult("oversmoothing.contrast", ok, [collapse, retained, gap],
                       "dt=1 ratio < 1e-3; T=1 ratio > 0.1; T=1 oracle gap < 1e-2")


@_timed
def check_error_bound(seeds: int = 20) -> CheckResult:
    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(1000 + seed)
        n = int(rng.integers(3, 9))
        A_hat = symmetric_normalize(random_symmetric_graph(rng, n))
        lap = np.eye(n) - A_hat
        l_norm = float(np.linalg.norm(lap, 2))
        h0 = rng.standard_normal((n, 2, 3))
        for T in (0.5, 1.0, 2.0):
            ref = heat_kernel_oracle(A_hat, T, h0)
            for K in (1, 2, 4, 8, 16, 32):
                out = integrate(lambda h, _k: cgp_field(h, A_hat), Tensor(h0),
                                SolverSpec.from_steps("euler", T, K)).data
                err = float(np.linalg.norm(out - ref))
                bound = euler_error_bound(T, l_norm, float(np.linalg.norm(h0)), K)
                worst = max(worst, err / bound)
    return CheckResult("bound.euler", worst <= 1.0, worst, "error / bound <= 1 on every instance")


SUITES = {
    "cgp": (check_cgp_discrete, check_cgp_convergence_euler, check_cgp_convergence_rk4,
            check_graph_structure),
    "cta": (check_cta_discrete, check_receptive_field),
    "gradients": (check_gradients,),
    "oversmoothing": (check_oversmoothing,),
    "bound": (check_error_bound,),
}


def run_suite(name: str) -> list[CheckResult]:
    if name == "all":
        names = list(SUITES)
    elif name in SUITES:
        names = [name]
    else:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)} or 'all'")
    return [check() for n in names for check in SUITES[n]]

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stode import autodiff as ad
from stode.autodiff import Tensor

settings.register_profile("stode", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("stode")


def numeric_grad(fn, arrays, h=1e-5):
    """Central differences of scalar fn(*arrays) w.r.t. every array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn(*arrays)
            flat[i] = orig - h
            down = fn(*arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def check_grad(build, *arrays, tol=1e-4, seed=0):
    """Compare backprop with finite differences for a random projection of build(*tensors)."""
    rng = np.random.default_rng(seed)
    with ad.no_grad():
        out_shape = build(*[Tensor(a) for a in arrays]).shape
    proj = rng.standard_normal(out_shape)

    def scalar(*arrs):
        with ad.no_grad():
            return float(np.sum(build(*[Tensor(a) for a in arrs]).data * proj))

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    ad.total(ad.mul(build(*leaves), Tensor(proj))).backward()
    numeric = numeric_grad(scalar, [a.copy() for a in arrays])
    errs = [rel_err(l.grad, n) for l, n in zip(leaves, numeric)]
    assert max(errs) < tol, errs
    return errs


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)

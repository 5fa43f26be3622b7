"""Compare the compiled convolution kernel with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Times forward+backward of the dilated convolution at a few sizes, plus one
full model training step, under each backend. Outputs are checked to agree
before anything is timed.
"""
import argparse
import json
import timeit

import numpy as np

from stode import kernels
from stode.model import Forecaster, ModelConfig, loss_mae

SIZES = [  # (batch*nodes, channels, length, width, dilation)
    (32 * 5, 4, 25, 7, 1),
    (32 * 20, 8, 25, 7, 1),
    (64 * 20, 16, 43, 7, 2),
]


def conv_case(bn, c, q, m, d, rng):
    x = rng.standard_normal((bn, c, q))
    w = rng.standard_normal((c, c, m))
    b = rng.standard_normal(c)
    g = rng.standard_normal((bn, c, q - d * (m - 1)))
    return x, w, b, g, d


def conv_step(x, w, b, g, d):
    kernels.conv1d_forward(x, w, b, d)
    kernels.conv1d_backward(g, x, w, d)


def model_step(model, X, Y):
    model.zero_grad()
    loss_mae(model.forward(X, training=True), Y).backward()


def check_agreement(case) -> float:
    x, w, b, g, d = case
    out = {}
    for name in ("compiled", "python"):
        with kernels.use_backend(name):
            out[name] = (kernels.conv1d_forward(x, w, b, d), *kernels.conv1d_backward(g, x, w, d))
    return max(float(np.abs(a - b).max()) for a, b in zip(out["compiled"], out["python"]))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    if kernels.compiled_backend is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    rng = np.random.default_rng(0)
    rows = []
    for size in SIZES:
        case = conv_case(*size, rng)
        diff = check_agreement(case)
        row = {"case": "conv1d " + "x".join(map(str, size)), "max_abs_diff": diff}
        for name in ("compiled", "python"):
            with kernels.use_backend(name):
                t = min(timeit.repeat(lambda: conv_step(*case), repeat=args.repeat, number=args.number))
            row[name] = t / args.number
        rows.append(row)

    model = Forecaster(ModelConfig(num_nodes=20, seq_len=24, dropout=0.0))
    X = rng.standard_normal((32, 20, 1, 24))
    Y = rng.standard_normal((32, 20, 1))
    row = {"case": "model step B=32 N=20", "max_abs_diff": 0.0}
    for name in ("compiled", "python"):
        with kernels.use_backend(name):
            t = min(timeit.repeat(lambda: model_step(model, X, Y), repeat=args.repeat, number=2))
        row[name] = t / 2
    rows.append(row)

    print(f"{'case':32s} {'compiled ms':>12s} {'python ms':>10s} {'speedup':>8s} {'max diff':>9s}")
    for r in rows:
        print(f"{r['case']:32s} {1e3 * r['compiled']:12.3f} {1e3 * r['python']:10.3f} "
              f"{r['python'] / r['compiled']:8.2f} {r['max_abs_diff']:9.1e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()

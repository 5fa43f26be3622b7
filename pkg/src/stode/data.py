"""Series ingestion, scaling, chronological splits, windows and synthetic data.

Indexing is 0-based throughout: a window starting at row ``t`` covers rows
``[t, t+T)``; the single-step target is row ``t+T+H-1`` and the multi-step
target covers rows ``[t+T, t+T+H)``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "DataError",
    "SeriesMatrix",
    "WindowBatch",
    "Scaler",
    "load_matrix_csv",
    "save_matrix_csv",
    "split_chronological",
    "make_windows",
    "synth_generate",
    "write_synthetic",
    "iterate_batches",
]


class DataError(ValueError):
    pass


@dataclass
class SeriesMatrix:
    values: np.ndarray  # S x N, time-major
    names: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"series must be 2-d (S x N), got shape {self.values.shape}")
        if not self.names:
            self.names = [f"x{i}" for i in range(self.values.shape[1])]

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def num_vars(self) -> int:
        return self.values.shape[1]


def load_matrix_csv(path) -> SeriesMatrix:
    """Read comma-separated float rows (one timestep per row).

    Rows holding NaN (or empty cells) are dropped and counted in
    ``meta["rejected_rows"]``; ragged rows and unparsable cells raise.
    """
    path = Path(path)
    rows: list[list[float]] = []
    rejected = 0
    width = None
    with path.open(newline="") as fh:
        for i, raw in enumerate(csv.reader(fh)):
            if not raw or all(not c.strip() for c in raw):
                continue
            if width is None:
                width = len(raw)
            elif len(raw) != width:
                raise DataError(f"{path}: row {i} has {len(raw)} columns, expected {width}")
            vals = []
            for j, cell in enumerate(raw):
                cell = cell.strip()
                if not cell:
                    vals.append(math.nan)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(f"{path}: cannot parse {cell!r} at row {i}, column {j}") from None
            if any(math.isnan(v) for v in vals):
                rejected += 1
                continue
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    if rejected:
        log.warning("%s: rejected %d rows containing NaN", path, rejected)
    return SeriesMatrix(np.array(rows), meta={"source": str(path), "rejected_rows": rejected})


def save_matrix_csv(path, values: np.ndarray) -> None:
    np.savetxt(path, np.asarray(values), delimiter=",", fmt="%.17g")


def split_chronological(series, fractions: Sequence[float] = (0.6, 0.2, 0.2)):
    """Contiguous (train, val, test) row blocks in time order."""
    values = series.values if isinstance(series, SeriesMatrix) else np.asarray(series)
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions must be three numbers summing to 1, got {fractions}")
    s = values.shape[0]
    b1 = int(math.floor(s * fractions[0] + 1e-9))
    b2 = int(math.floor(s * (fractions[0] + fractions[1]) + 1e-9))
    parts = (values[:b1], values[b1:b2], values[b2:])
    for name, p in zip(("train", "val", "test"), parts):
        if len(p) == 0:
            raise DataError(f"{name} split is empty for S={s} and fractions {fractions}")
    return parts


@dataclass
class WindowBatch:
    inputs: np.ndarray  # B x N x D x T
    targets: np.ndarray  # B x N x D (single) or B x N x D x H (multi)
    starts: np.ndarray  # row index t of each window
    seq_len: int
    horizon: int
    mode: str

    def __len__(self) -> int:
        return len(self.starts)

    def subset(self, idx) -> "WindowBatch":
        return WindowBatch(
            self.inputs[idx], self.targets[idx], self.starts[idx], self.seq_len, self.horizon, self.mode
        )

    def target_rows(self) -> np.ndarray:
        """Source row indices of every target, shape B x (1 or H)."""
        if self.mode == "single":
            return (self.starts + self.seq_len + self.horizon - 1)[:, None]
        return self.starts[:, None] + self.seq_len + np.arange(self.horizon)[None, :]


def make_windows(series, seq_len: int, horizon: int, mode: str = "single") -> WindowBatch:
    """All stride-1 (input, target) pairs of a S x N (or S x N x D) matrix."""
    if mode not in ("single", "multi"):
        raise DataError(f"mode must be 'single' or 'multi', got {mode!r}")
    values = series.values if isinstance(series, SeriesMatrix) else np.asarray(series, dtype=np.float64)
    if values.ndim == 2:
        values = values[:, :, None]
    s, n, d = values.shape
    count = s - seq_len - horizon + 1
    if count <= 0:
        log.warning("series of length %d too short for T=%d, H=%d", s, seq_len, horizon)
        empty_t = (0, n, d) if mode == "single" else (0, n, d, horizon)
        return WindowBatch(np.zeros((0, n, d, seq_len)), np.zeros(empty_t), np.zeros(0, dtype=int),
                           seq_len, horizon, mode)
    starts = np.arange(count)
    # node-major layout: B x N x D x T
    stacked = np.transpose(values, (1, 2, 0))
    idx = starts[:, None] + np.arange(seq_len)[None, :]
    inputs = np.transpose(stacked[:, :, idx], (2, 0, 1, 3))
    if mode == "single":
        targets = values[starts + seq_len + horizon - 1]
    else:
        tidx = starts[:, None] + seq_len + np.arange(horizon)[None, :]
        targets = np.transpose(stacked[:, :, tidx], (2, 0, 1, 3))
    return WindowBatch(np.ascontiguousarray(inputs), np.ascontiguousarray(targets), starts,
                       seq_len, horizon, mode)


class Scaler:
    """Per-variable max-abs or z-score scaling fit on training rows only."""

    KINDS = ("maxabs", "zscore")

    def __init__(self, kind: str = "maxabs"):
        if kind not in self.KINDS:
            raise DataError(f"unknown scaler {kind!r}")
        self.kind = kind
        self.shift: np.ndarray | None = None
        self.scale: np.ndarray | None = None

    def fit(self, train_values) -> "Scaler":
        x = np.asarray(train_values, dtype=np.float64)
        if self.kind == "maxabs":
            self.shift = np.zeros(x.shape[1])
            self.scale = np.abs(x).max(axis=0)
        else:
            self.shift = x.mean(axis=0)
            self.scale = x.std(axis=0)
        self.scale = np.where(self.scale > 0, self.scale, 1.0)
        return self

    def _check(self):
        if self.scale is None:
            raise DataError("scaler used before fit")

    def transform(self, x):
        self._check()
        return (np.asarray(x) - self.shift) / self.scale

    def inverse(self, x, axis: int = -1):
        """Undo ``transform``; ``axis`` locates the variable axis of ``x``."""
        self._check()
        x = np.asarray(x)
        shape = [1] * x.ndim
        shape[axis] = -1
        return x * self.scale.reshape(shape) + self.shift.reshape(shape)

    def to_dict(self) -> dict:
        self._check()
        return {"kind": self.kind, "shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Scaler":
        s = cls(d["kind"])
        s.shift = np.asarray(d["shift"], dtype=np.float64)
        s.scale = np.asarray(d["scale"], dtype=np.float64)
        return s


def synth_generate(num_nodes: int, length: int, lag: int = 2, noise: float = 0.05, seed: int = 0,
                   coupling: float = 0.9, own: float = 0.3):
    """Lagged directed chain: x_i(t) = coupling * x_{i-1}(t - lag) + own * sin(w_i t) + noise.

    x_0 is a mixture of sinusoids. Returns the series and the chain edges as
    (source, target) pairs.
    """
    if num_nodes < 2:
        raise DataError("synthetic chain needs at least two nodes")
    rng = np.random.default_rng(seed)
    burn = num_nodes * lag
    total = length + burn
    t = np.arange(total, dtype=np.float64) - burn
    periods = rng.choice([6.0, 12.0, 24.0, 48.0], size=3, replace=False)
    amps = rng.uniform(0.5, 1.0, size=3)
    phases = rng.uniform(0, 2 * np.pi, size=3)
    x = np.zeros((total, num_nodes))
    x[:, 0] = sum(a * np.sin(2 * np.pi * t / p + ph) for a, p, ph in zip(amps, periods, phases))
    x[:, 0] += noise * rng.standard_normal(total)
    omegas = rng.uniform(2 * np.pi / 30, 2 * np.pi / 8, size=num_nodes)
    for i in range(1, num_nodes):
        if lag:
            prev = np.zeros(total)
            prev[lag:] = x[:-lag, i - 1]
        else:
            prev = x[:, i - 1]
        x[:, i] = coupling * prev + own * np.sin(omegas[i] * t) + noise * rng.standard_normal(total)
    edges = [(i - 1, i) for i in range(1, num_nodes)]
    meta = {"generator": "lagged-chain", "lag": lag, "noise": noise, "seed": seed,
            "coupling": coupling, "own": own}
    return SeriesMatrix(x[burn:], meta=meta), edges


def write_synthetic(out_dir, num_nodes: int, length: int, lag: int = 2, noise: float = 0.05,
                    seed: int = 0) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    series, edges = synth_generate(num_nodes, length, lag, noise, seed)
    csv_path, edges_path = out_dir / "series.csv", out_dir / "edges.json"
    save_matrix_csv(csv_path, series.values)
    doc = {"direction": "source->target", "edges": [list(e) for e in edges], **series.meta}
    edges_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return csv_path, edges_path


def iterate_batches(windows: WindowBatch, batch_size: int, rng: np.random.Generator | None = None):
    """Yield WindowBatch slices; shuffled at window level when ``rng`` is given."""
    order = np.arange(len(windows)) if rng is None else rng.permutation(len(windows))
    for i in range(0, len(order), batch_size):
        yield windows.subset(order[i:i + batch_size])

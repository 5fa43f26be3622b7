"""Forecast metrics for the single-step (RSE/CORR) and multi-step (MAE/RMSE/MAPE) protocols."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = ["MetricError", "MetricReport", "single_step_metrics", "multi_step_metrics"]


class MetricError(ValueError):
    pass


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise MetricError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    return pred, truth


def single_step_metrics(pred, truth) -> tuple[float, float]:
    """(RSE, CORR) over a T' x N block (extra trailing axes are flattened into N).

    CORR averages per-variable Pearson correlation across time and skips
    variables whose truth or prediction has zero variance.
    """
    pred, truth = _pair(pred, truth)
    pred = pred.reshape(pred.shape[0], -1)
    truth = truth.reshape(truth.shape[0], -1)
    if pred.shape[0] < 2:
        raise MetricError("single-step metrics need at least two time rows")
    denom = np.sqrt(np.sum((truth - truth.mean()) ** 2))
    if denom == 0:
        raise MetricError("truth is constant; RSE undefined")
    rse = float(np.sqrt(np.sum((pred - truth) ** 2)) / denom)
    pc = pred - pred.mean(axis=0)
    tc = truth - truth.mean(axis=0)
    sp = np.sqrt((pc ** 2).sum(axis=0))
    st = np.sqrt((tc ** 2).sum(axis=0))
    ok = (sp > 0) & (st > 0)
    if not ok.any():
        raise MetricError("every variable has zero variance; CORR undefined")
    corr = (pc[:, ok] * tc[:, ok]).sum(axis=0) / (sp[ok] * st[ok])
    return rse, float(np.clip(corr, -1.0, 1.0).mean())


def multi_step_metrics(pred, truth, mask_threshold: float | None = 0.0) -> tuple[float, float, float]:
    """(MAE, RMSE, MAPE%) over cells with |truth| > mask_threshold.

    With ``mask_threshold=None`` nothing is masked for MAE/RMSE and MAPE
    skips zero-truth cells instead of dividing by zero.
    """
    pred, truth = _pair(pred, truth)
    if mask_threshold is None:
        keep = np.ones(truth.shape, dtype=bool)
    else:
        keep = np.abs(truth) > mask_threshold
    if not keep.any():
        raise MetricError("every cell is masked")
    err = (pred - truth)[keep]
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err ** 2)))
    nz = keep & (truth != 0)
    mape = float(np.mean(np.abs((pred - truth)[nz] / truth[nz])) * 100.0) if nz.any() else 0.0
    return mae, rmse, mape


@dataclass
class MetricReport:
    """Per-horizon rows; every row holds the protocol's metrics and sample count."""

    protocol: str  # "single" or "multi"
    rows: list[dict] = field(default_factory=list)
    variant: str = "full"

    METRICS = {"single": ("rse", "corr"), "multi": ("mae", "rmse", "mape")}

    def add(self, horizon: int, values, count: int) -> None:
        names = self.METRICS[self.protocol]
        row = {"horizon": int(horizon), "count": int(count)}
        row.update({k: float(v) for k, v in zip(names, values)})
        self.rows.append(row)

    def to_dict(self) -> dict:
        return {"protocol": self.protocol, "variant": self.variant, "rows": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        cols = ["variant", "protocol", "horizon", *self.METRICS[self.protocol], "count"]
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({"variant": self.variant, "protocol": self.protocol, **r})
        return buf.getvalue()

    @classmethod
    def from_dict(cls, d) -> "MetricReport":
        return cls(d["protocol"], list(d["rows"]), d.get("variant", "full"))

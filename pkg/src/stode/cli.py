"""Command-line entry point: ``stode {train,eval,forecast,synth,verify}``.

Run settings live in one flat JSON document. Keys from ``--config`` are
applied first, then ``--set key=value`` pairs and the dedicated flags. The
fully resolved document is written to the output directory before any work
starts. ``STODE_OUTPUT_DIR`` overrides the output directory unless
``--output-dir`` is given explicitly.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import ContractError, DimensionError
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DataError, Scaler, load_matrix_csv, make_windows, split_chronological, write_synthetic
from .metrics import MetricError, MetricReport, multi_step_metrics, single_step_metrics
from .model import ABLATION_FLAGS, Forecaster, ModelConfig
from .training import TrainingDiverged, TrainRun, train

log = logging.getLogger("stode")

OUTPUT_ENV = "STODE_OUTPUT_DIR"
EXIT_OK, EXIT_USER, EXIT_VERIFY = 0, 1, 2
MULTI_HORIZONS = (3, 6, 12)

_MODEL_KEYS = [f.name for f in dataclasses.fields(ModelConfig) if f.name != "num_nodes"]
_TRAIN_KEYS = ["epochs", "batch_size", "lr", "lr_gamma", "lr_step", "clip_norm"]


def default_run_config() -> dict:
    model = {f.name: f.default for f in dataclasses.fields(ModelConfig)
             if f.name not in ("num_nodes", "seq_len")}
    model["widths"] = list(model["widths"])
    run = TrainRun()
    return {
        "data": None,
        "output_dir": "stode_out",
        "split": [0.6, 0.2, 0.2],
        "scaler": "maxabs",
        "mask_threshold": 0.0,
        "seq_len": 24,
        **model,
        **{k: getattr(run, k) for k in _TRAIN_KEYS},
    }


class ConfigError(ValueError):
    pass


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the file, then overrides; unknown keys are rejected."""
    cfg = default_run_config()
    layers = []
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: expected a flat JSON object")
        layers.append((str(path), doc))
    if overrides:
        layers.append(("command line", overrides))
    for source, doc in layers:
        unknown = sorted(set(doc) - set(cfg))
        if unknown:
            raise ConfigError(f"{source}: unknown config keys {unknown}")
        for k, v in doc.items():
            if isinstance(v, dict):
                raise ConfigError(f"{source}: key {k!r} must be a scalar or list (flat config)")
        cfg.update(doc)
    return cfg


def model_config(cfg: dict, num_nodes: int) -> ModelConfig:
    kwargs = {k: cfg[k] for k in _MODEL_KEYS}
    kwargs["widths"] = tuple(kwargs["widths"])
    return ModelConfig(num_nodes=num_nodes, **kwargs)


def train_run(cfg: dict) -> TrainRun:
    return TrainRun(seed=int(cfg["seed"]), **{k: cfg[k] for k in _TRAIN_KEYS})


def output_dir(cfg: dict, explicit: bool) -> Path:
    if not explicit and os.environ.get(OUTPUT_ENV):
        cfg["output_dir"] = os.environ[OUTPUT_ENV]
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _windows(values: np.ndarray, cfg: dict):
    return make_windows(values, cfg["seq_len"], cfg["horizon"], cfg["mode"])


def prepare_splits(cfg: dict, scaler: Scaler | None = None):
    """Load, split and scale; windows are cut inside each split separately."""
    if not cfg.get("data"):
        raise ConfigError("no dataset given (set 'data' or pass --data)")
    series = load_matrix_csv(cfg["data"])
    if series.meta.get("rejected_rows"):
        log.warning("%s: dropped %d rows containing NaN", cfg["data"], series.meta["rejected_rows"])
    parts = split_chronological(series, cfg["split"])
    if scaler is None:
        scaler = Scaler(cfg["scaler"]).fit(parts[0])
    scaled = [scaler.transform(p) for p in parts]
    return series, scaler, dict(zip(("train", "val", "test"), scaled))


def horizons_for(cfg: dict, requested=None) -> list[int]:
    if cfg["mode"] == "single":
        if requested and list(requested) != [cfg["horizon"]]:
            raise ConfigError(
                f"single-step model was trained for horizon {cfg['horizon']}; got {list(requested)}"
            )
        return [cfg["horizon"]]
    hs = list(requested) if requested else [h for h in MULTI_HORIZONS if h <= cfg["horizon"]]
    hs = hs or [cfg["horizon"]]
    bad = [h for h in hs if not 1 <= h <= cfg["horizon"]]
    if bad:
        raise ConfigError(f"horizons {bad} outside 1..{cfg['horizon']}")
    return hs


def report_from_predictions(pred, truth, mode: str, horizons, variant: str = "full",
                            mask_threshold=0.0) -> MetricReport:
    """Metrics on unscaled arrays: single B x N, multi B x N x H."""
    report = MetricReport(mode, variant=variant)
    if mode == "single":
        report.add(horizons[0], single_step_metrics(pred, truth), len(pred))
    else:
        for h in horizons:
            report.add(h, multi_step_metrics(pred[..., h - 1], truth[..., h - 1], mask_threshold),
                       len(pred))
    return report


def evaluate(model: Forecaster, windows, scaler: Scaler, cfg: dict, horizons,
             batch_size: int = 256) -> MetricReport:
    if len(windows) == 0:
        raise DataError("evaluation split has no complete windows")
    preds = [model.predict(windows.inputs[i:i + batch_size]) for i in range(0, len(windows), batch_size)]
    pred = np.concatenate(preds)[:, :, 0]
    truth = windows.targets[:, :, 0]
    # variable axis is 1 in both layouts (B x N or B x N x H)
    pred, truth = scaler.inverse(pred, axis=1), scaler.inverse(truth, axis=1)
    return report_from_predictions(pred, truth, cfg["mode"], horizons, model.config.variant,
                                   cfg["mask_threshold"])


def _write_report(report: MetricReport, out: Path, stem: str) -> None:
    (out / f"{stem}.json").write_text(report.to_json() + "\n")
    (out / f"{stem}.csv").write_text(report.to_csv())


def _print_report(report: MetricReport) -> None:
    names = MetricReport.METRICS[report.protocol]
    for r in report.rows:
        vals = " ".join(f"{k}={r[k]:.6g}" for k in names)
        print(f"[{report.variant}] horizon {r['horizon']}: {vals} (n={r['count']})")


# -- commands -----------------------------------------------------------------------
def cmd_train(args) -> int:
    cfg = resolve_config(args.config, _overrides(args))
    out = output_dir(cfg, args.output_dir is not None)
    _write_json(out / "config.json", cfg)
    series, scaler, parts = prepare_splits(cfg)
    mcfg = model_config(cfg, series.num_vars)
    model = Forecaster(mcfg)
    w_train, w_val, w_test = (_windows(parts[k], cfg) for k in ("train", "val", "test"))
    if len(w_train) == 0:
        raise DataError("training split is too short for one window")
    result = train(model, w_train, w_val if len(w_val) else None, train_run(cfg),
                   log_path=out / "train_log.csv")
    extra = {"scaler": scaler.to_dict(), "run_config": cfg, "best_epoch": result.best_epoch}
    save_checkpoint(model, out / "model.npz", extra)
    np.savetxt(out / "adjacency.csv", model.adjacency().data, delimiter=",", fmt="%.17g")
    report = evaluate(model, w_test, scaler, cfg, horizons_for(cfg))
    _write_report(report, out, "report")
    _print_report(report)
    print(f"artifacts written to {out}")
    return EXIT_OK


def _load_for_inference(args):
    model, extra = load_checkpoint(args.checkpoint)
    cfg = dict(extra["run_config"])
    if args.data:
        cfg["data"] = args.data
    scaler = Scaler.from_dict(extra["scaler"])
    return model, cfg, scaler


def cmd_eval(args) -> int:
    model, cfg, scaler = _load_for_inference(args)
    out = _mkdir(args.output_dir) if args.output_dir else output_dir(cfg, False)
    series, _, parts = prepare_splits(cfg, scaler)
    if series.num_vars != model.config.num_nodes:
        raise DimensionError(
            f"data has {series.num_vars} variables but the checkpoint expects {model.config.num_nodes}"
        )
    values = np.concatenate(list(parts.values())) if args.split == "all" else parts[args.split]
    report = evaluate(model, _windows(values, cfg), scaler, cfg, horizons_for(cfg, args.horizons))
    _write_report(report, out, f"eval_{args.split}")
    _print_report(report)
    return EXIT_OK


def cmd_forecast(args) -> int:
    model, cfg, scaler = _load_for_inference(args)
    out = _mkdir(args.output_dir) if args.output_dir else output_dir(cfg, False)
    if not cfg.get("data"):
        raise ConfigError("no dataset given (pass --data)")
    series = load_matrix_csv(cfg["data"])
    if series.num_vars != model.config.num_nodes:
        raise DimensionError(
            f"data has {series.num_vars} variables but the checkpoint expects {model.config.num_nodes}"
        )
    T = model.config.seq_len
    if series.length < T:
        raise DataError(f"need at least {T} rows to forecast, got {series.length}")
    window = scaler.transform(series.values[-T:])  # T x N
    pred = model.predict(window.T[None, :, None, :])[0, :, 0]  # N or N x H
    if model.config.mode == "single":
        steps, rows = [model.config.horizon], scaler.inverse(pred[None, :], axis=1)
    else:
        steps, rows = list(range(1, model.config.horizon + 1)), scaler.inverse(pred.T, axis=1)
    names = series.names or [f"x{i}" for i in range(series.num_vars)]
    path = out / "forecast.csv"
    with path.open("w") as fh:
        fh.write(",".join(["step", *names]) + "\n")
        for s, row in zip(steps, rows):
            fh.write(",".join([str(s), *(f"{v:.17g}" for v in row)]) + "\n")
    print(f"forecast written to {path}")
    return EXIT_OK


def cmd_synth(args) -> int:
    out = _mkdir(args.output_dir) if args.output_dir else output_dir({"output_dir": "stode_synth"}, False)
    csv_path, edges_path = write_synthetic(out, args.nodes, args.length, args.lag, args.noise, args.seed)
    print(f"wrote {csv_path} and {edges_path}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suite

    results = run_suite(args.suite)
    for r in results:
        print(r.line())
    if args.output_dir or os.environ.get(OUTPUT_ENV):
        out = _mkdir(args.output_dir or os.environ[OUTPUT_ENV])
        _write_json(out / f"verify_{args.suite}.json", [r.to_dict() for r in results])
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


def _mkdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _overrides(args) -> dict:
    over = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        over[k.strip()] = _parse_value(v)
    for key in ("data", "output_dir", "epochs", "seed", "horizon", "mode"):
        val = getattr(args, key, None)
        if val is not None:
            over[key] = val
    for flag in args.ablation or []:
        over[flag] = True
    return over


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; 2 is reserved for failed verification
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="stode", description="Continuous spatio-temporal graph forecaster")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write checkpoint, log, config and test report")
    t.add_argument("--config", help="flat JSON run config")
    t.add_argument("--data", help="CSV series (rows = timesteps)")
    t.add_argument("--output-dir")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--horizon", type=int)
    t.add_argument("--mode", choices=["single", "multi"])
    t.add_argument("--ablation", action="append", choices=ABLATION_FLAGS,
                   help="ablation flag, repeatable")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a data split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", help="defaults to the dataset recorded in the checkpoint")
    e.add_argument("--split", choices=["train", "val", "test", "all"], default="test")
    e.add_argument("--horizons", type=int, nargs="+", help="multi-step horizons to report")
    e.add_argument("--output-dir")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("forecast", help="forecast from the last window of a series")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--data")
    f.add_argument("--output-dir")
    f.set_defaults(func=cmd_forecast)

    s = sub.add_parser("synth", help="write the lagged-chain synthetic dataset")
    s.add_argument("--nodes", type=int, default=5)
    s.add_argument("--length", type=int, default=2000)
    s.add_argument("--lag", type=int, default=2)
    s.add_argument("--noise", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--output-dir")
    s.set_defaults(func=cmd_synth)

    v = sub.add_parser("verify", help="run numerical verification suites")
    v.add_argument("--suite", choices=["cgp", "cta", "gradients", "oversmoothing", "bound", "all"],
                   default="all")
    v.add_argument("--output-dir")
    v.set_defaults(func=cmd_verify)
    return p


USER_ERRORS = (ConfigError, ContractError, DimensionError, DataError, MetricError, TrainingDiverged,
               FileNotFoundError, KeyError, TypeError, ValueError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except USER_ERRORS as e:
        print(f"stode {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``timemixer <verb> ...``.

Verbs: ``train``, ``evaluate``, ``predict``, ``ablate``, ``inspect-weights``
and ``forecastability``. Exit codes are 0 on success, 1 on a runtime failure
(e.g. a diverged run) and 2 on a usage, spec or input-data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentSpec, load_spec
from .data import Scaler, SeriesDataset, load_csv, split_and_scale, window_arrays
from .exceptions import ConfigError, DataError, TimeMixerError
from .metrics import MetricsConfig, MetricsReport, forecastability
from .model import ABLATION_CASES, CASE_SYMBOLS, init_parameters, parse_case
from .tensor import Tensor, no_grad
from .training import evaluate, predict_array, train, window_spec_for

logger = logging.getLogger("timemixer")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(TimeMixerError):
    """Bad flag values detected after argument parsing."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- shared helpers ---------------------------------------------------------------

def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def _parse_seeds(text: Optional[str]) -> Optional[List[int]]:
    if text is None:
        return None
    try:
        seeds = [int(tok) for tok in text.replace(" ", "").split(",") if tok]
    except ValueError:
        raise UsageError(f"--seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise UsageError("--seeds is empty")
    return seeds


def _load_dataset(spec: ExperimentSpec) -> SeriesDataset:
    path = Path(spec.data.path)
    ds = load_csv(path, spec.data.columns or None)
    return split_and_scale(ds, **spec.data.split_kwargs())


def _apply_scaler(ds: SeriesDataset, scaler: Scaler) -> SeriesDataset:
    return replace(ds, scaler=scaler, _scaled=scaler.transform(ds.values))


def _metadata(spec: ExperimentSpec, ds: SeriesDataset, seed: int) -> dict:
    return {
        "columns": list(ds.columns),
        "scaler_mean": [float(v) for v in ds.scaler.mean],
        "scaler_std": [float(v) for v in ds.scaler.std],
        "split": {k: list(v) for k, v in spec.data.split_kwargs().items()},
        "seed": seed,
        "train": spec.train.to_dict(),
        "metrics": asdict(spec.metrics),
    }


def _dataset_for_checkpoint(data_path, meta: dict, channels: int) -> SeriesDataset:
    """Re-split ``data_path`` the way the checkpoint was trained; scale with its stored statistics."""
    ds = load_csv(data_path, meta.get("columns") or None)
    if ds.num_channels != channels:
        raise DataError(f"{data_path} has {ds.num_channels} channels, checkpoint expects {channels}")
    split = {k: tuple(v) for k, v in meta.get("split", {"fractions": [0.7, 0.1, 0.2]}).items()}
    ds = split_and_scale(ds, **split)
    if "scaler_mean" in meta:
        ds = _apply_scaler(ds, Scaler(np.asarray(meta["scaler_mean"]), np.asarray(meta["scaler_std"])))
    return ds


def _window_counts(spec: ExperimentSpec, ds: SeriesDataset) -> dict:
    w = spec.window_spec()
    return {s: w.count(hi - lo) for s, (lo, hi) in ((s, ds.split_range(s)) for s in ("train", "val", "test"))}


def _fit_once(spec: ExperimentSpec, ds: SeriesDataset, seed: int, case=None, log=None):
    cfg = spec.model_config(ds.num_channels, case)
    model = init_parameters(cfg, seed)
    model, history = train(model, ds, replace(spec.train, seed=seed), log=log)
    metrics = evaluate(model, ds, "test", spec.metrics, spec.train.eval_batch_size)
    return model, history, metrics


# -- verbs ------------------------------------------------------------------------

def cmd_train(args) -> int:
    spec = _spec_from_args(args)
    seeds = _parse_seeds(args.seeds) or [spec.train.seed]
    ds = _load_dataset(spec)
    out = Path(args.output or spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    per_seed = []
    for seed in seeds:
        target = out if len(seeds) == 1 else out / f"seed_{seed}"
        target.mkdir(parents=True, exist_ok=True)
        logger.info("training seed %d -> %s", seed, target)
        model, history, metrics = _fit_once(spec, ds, seed, log=logger.info)
        save_checkpoint(target / "model.ckpt", model, _metadata(spec, ds, seed))
        history.to_csv(target / "history.csv")
        if args.plot:
            from .plotting import plot_history

            plot_history(history.records, target / "history.png")
        per_seed.append(metrics)
    report = MetricsReport.aggregate(per_seed, seeds).to_dict()
    report["model"] = spec.model_config(ds.num_channels).to_dict()
    report["num_parameters"] = model.num_parameters()
    report["windows"] = _window_counts(spec, ds)
    _write_json(out / "report.json", report)
    print(json.dumps(report["metrics"]))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    ds = _dataset_for_checkpoint(args.data, meta, model.config.channels)
    metrics_cfg = MetricsConfig(**meta.get("metrics", {}))
    values = evaluate(model, ds, args.split, metrics_cfg)
    report = MetricsReport(values).to_dict()
    text = json.dumps(report, indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_predict(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    cfg = model.config
    ds = _dataset_for_checkpoint(args.data, meta, cfg.channels)
    xs, ys = window_arrays(ds, window_spec_for(model), args.split)
    n = xs.shape[0]
    indices = range(n) if args.window_index is None else [args.window_index]
    if args.window_index is not None and not 0 <= args.window_index < n:
        raise UsageError(f"--window-index {args.window_index} out of range: "
                         f"the {args.split} split has {n} windows (0..{n - 1})")
    idx = np.asarray(list(indices), dtype=np.int64)
    pred_scaled = predict_array(model, xs[idx])
    scaler = ds.scaler
    y_true = scaler.inverse_transform(ys[idx])
    y_pred = scaler.inverse_transform(pred_scaled)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "predictions.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["window_index", "horizon_step", "channel", "y_true", "y_pred"])
        for k, wi in enumerate(idx):
            for h in range(cfg.pred_len):
                for c, name in enumerate(ds.columns):
                    w.writerow([int(wi), h, name, repr(float(y_true[k, h, c])), repr(float(y_pred[k, h, c]))])
    if args.per_scale:
        _write_per_scale(model, xs[idx], idx, ds.columns, out, args.plot, ys[idx])
    print(f"wrote {len(idx)} window(s) to {out}")
    return EXIT_OK


def _write_per_scale(model, xs, idx, columns, out: Path, plot: bool, ys, batch_size: int = 512) -> None:
    """Per-scale forecasts in the normalized space, where the scale columns add up to ``y_pred``."""
    model.eval()
    chunks = []
    with no_grad():
        for lo in range(0, xs.shape[0], batch_size):
            chunks.append([t.data for t in model.per_scale_predictions(Tensor(xs[lo:lo + batch_size]))])
    terms = [np.concatenate([c[m] for c in chunks]) for m in range(len(chunks[0]))]
    k = len(terms)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    if model.config.ensemble == "average":
        total = total / float(k)
    header = ["window_index", "horizon_step", "channel", "y_pred"]
    header += [f"scale_{m}" for m in range(k)] + [f"scale_{m}_times_{k}" for m in range(k)]
    with (out / "per_scale_predictions.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for j, wi in enumerate(idx):
            for h in range(total.shape[1]):
                for c, name in enumerate(columns):
                    row = [int(wi), h, name, repr(float(total[j, h, c]))]
                    row += [repr(float(t[j, h, c])) for t in terms]
                    row += [repr(float(k * t[j, h, c])) for t in terms]
                    w.writerow(row)
    if plot:
        from .plotting import plot_per_scale

        for c, name in enumerate(columns):
            plot_per_scale(xs[0], ys[0], [t[0] for t in terms], c,
                           out / f"per_scale_window{int(idx[0])}_{name}.png")


def _parse_cases(text: str) -> List[int]:
    if text.strip().lower() == "all":
        return sorted(ABLATION_CASES)
    try:
        return [parse_case(tok) for tok in text.replace(" ", "").split(",") if tok]
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def cmd_ablate(args) -> int:
    spec = _spec_from_args(args)
    cases = _parse_cases(args.cases)
    metric_names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    ds = _load_dataset(spec)
    seed = spec.train.seed
    rows = []
    for case in cases:
        logger.info("ablation case %d", case)
        _, _, metrics = _fit_once(spec, ds, seed, case=case)
        missing = [m for m in metric_names if m not in metrics]
        if missing:
            raise UsageError(f"metric(s) {missing} unavailable for this data; computed: {sorted(metrics)}")
        row = {"case": case, "symbol": CASE_SYMBOLS[case - 1], **asdict(ABLATION_CASES[case])}
        row.update({m: metrics[m] for m in metric_names})
        rows.append(row)
    out = Path(args.output or spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "ablation_table.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(rows[0]))
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else str(v).lower() if isinstance(v, bool) else v
                        for v in row.values()])
    if args.plot:
        from .plotting import plot_ablation

        plot_ablation(rows, metric_names[0], out / "ablation.png")
    print(f"wrote {len(rows)} case(s) to {out / 'ablation_table.csv'}")
    return EXIT_OK


def mixing_matrices(model, layer: int, scale: Optional[int] = None) -> List[tuple]:
    """``(name, matrix, src_scale, dst_scale)`` for every temporal mixing weight in ``layer``."""
    cfg = model.config
    if not 0 <= layer < cfg.num_layers:
        raise UsageError(f"--layer {layer} out of range: model has {cfg.num_layers} layer(s)")
    if scale is not None and not 0 <= scale <= cfg.num_scales:
        raise UsageError(f"--scale {scale} out of range: model has scales 0..{cfg.num_scales}")
    found = []
    prefix = f"layers.{layer}."
    for name, p in model.named_parameters():
        if not name.startswith(prefix) or ".ffn." in name:
            continue
        _, _, stream, direction, dst, weight = name.split(".")
        if weight not in ("w1", "w2") or (scale is not None and int(dst) != scale):
            continue
        dst = int(dst)
        src = dst - 1 if direction == "bottom_up" else dst + 1
        found.append((name, p.data, src if weight == "w1" else dst, dst))
    return found


def cmd_inspect_weights(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    mats = mixing_matrices(model, args.layer, args.scale)
    if not mats:
        raise UsageError(f"no temporal mixing weights in layer {args.layer}"
                         + (f" at scale {args.scale}" if args.scale is not None else "")
                         + f" for ablation {asdict(model.config.ablation)}")
    lengths = model.config.scale_lengths
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for name, mat, src, dst in mats:
        stem = name.replace(".", "_")
        path = out / f"{stem}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            fh.write(f"# parameter: {name}\n")
            fh.write(f"# rows: {mat.shape[0]} output steps (scale {dst}, length {lengths[dst]})\n")
            fh.write(f"# cols: {mat.shape[1]} input steps (scale {src}, length {lengths[src]})\n")
            w = csv.writer(fh)
            for row in mat:
                w.writerow([repr(float(v)) for v in row])
        if args.plot:
            from .plotting import plot_heatmap

            plot_heatmap(mat, name, out / f"{stem}.png")
        print(path)
    return EXIT_OK


def cmd_forecastability(args) -> int:
    ds = load_csv(args.data, args.columns.split(",") if args.columns else None)
    scores = {name: forecastability(ds.values[:, c]) for c, name in enumerate(ds.columns)}
    text = json.dumps(scores, indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------------

def _spec_from_args(args) -> ExperimentSpec:
    spec = load_spec(args.spec)
    if getattr(args, "data", None):
        spec = replace(spec, data=replace(spec.data, path=args.data))
    return spec.with_overrides(seed=getattr(args, "seed", None), epochs=getattr(args, "epochs", None),
                               deterministic=getattr(args, "deterministic", None))


def _add_spec_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("spec", help="spec file (.toml or .json) or a shipped spec name: etth1, ettm1")
    p.add_argument("--data", help="override [data] path")
    p.add_argument("--output", help="override [output] dir")
    p.add_argument("--seed", type=int, help="override [train] seed")
    p.add_argument("--epochs", type=int, help="override [train] epochs")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None,
                   help="pin BLAS to one thread for bit-identical runs (default: spec value)")
    p.add_argument("--plot", action="store_true", help="also render PNG figures (needs matplotlib)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="timemixer", description="Multiscale mixing forecaster.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train, evaluate on the test split, write artifacts")
    _add_spec_args(p)
    p.add_argument("--seeds", help="comma-separated seeds; metrics are averaged across them")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics of a checkpoint on a data file")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--output", help="also write the JSON here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="de-scaled forecasts as CSV")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--window-index", type=int, help="one window of the split (default: all)")
    p.add_argument("--per-scale", action="store_true", help="also write each scale's forecast")
    p.add_argument("--output", default=".", help="output directory")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="train and score the ablation cases")
    _add_spec_args(p)
    p.add_argument("--cases", default="all", help="'all' or a comma list such as 1,2,10 or ①,②")
    p.add_argument("--metrics", default="mse,mae", help="metric columns (e.g. smape,mase,owa)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect-weights", help="temporal mixing matrices as CSV")
    p.add_argument("checkpoint")
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--scale", type=int, help="destination scale (default: all)")
    p.add_argument("--output", default=".", help="output directory")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_inspect_weights)

    p = sub.add_parser("forecastability", help="per-channel forecastability as JSON")
    p.add_argument("data")
    p.add_argument("--columns", help="comma-separated subset of columns")
    p.add_argument("--output", help="also write the JSON here")
    p.set_defaults(func=cmd_forecastability)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"timemixer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, TimeMixerError, ValueError) as exc:
        if isinstance(exc, RuntimeError):
            print(f"timemixer: runtime failure: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        print(f"timemixer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeError, FloatingPointError, OSError) as exc:
        print(f"timemixer: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

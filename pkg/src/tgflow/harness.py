"""Experiment orchestration: datasets, per-cell training, evaluation, sampling, reports.

Run layout::

    <output_dir>/<run_id>/data/N<n>/{train.tgfd, test.tgfd, meta.json}
    <output_dir>/<run_id>/<N>/<variant>/<seed>/{checkpoint.tgfc, log.csv, samples.tgfd}
    <output_dir>/<run_id>/{metrics.*, samples.json, report.*, *.svg}
"""

from __future__ import annotations

import csv
import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from . import dataset as ds
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, config_dict
from .errors import ConfigError, MissingInputError, NumericError
from .models import REFERENCE_VARIANT, TgfmModel, VariantKind, Widths, match_parameters
from .plotting import grouped_bars
from .sampler import evaluate, integrate, nearest_mean_distance, normalize_report
from .training import train

__all__ = [
    "LOG_COLUMNS",
    "cell_dir",
    "data_dir",
    "cmd_gen_data",
    "cmd_train",
    "cmd_eval",
    "cmd_sample",
    "cmd_report",
    "load_cell_model",
    "read_log",
]

log = logging.getLogger(__name__)

LOG_COLUMNS = [
    "run_id", "variant", "N", "seed", "epoch",
    "train_loss", "train_fm_loss", "test_loss", "param_count", "seconds",
]
TIMING_COLUMNS = ("seconds",)
CHECKPOINT = "checkpoint.tgfc"
LOG_FILE = "log.csv"
SAMPLE_STREAM = 3
HEADLINE_WINNERS = (VariantKind.PlainVFTensorGauge, VariantKind.TensorVFTensorGauge)
HEADLINE_BASELINES = (VariantKind.PlainVF, VariantKind.GaugeFlow)


def data_dir(cfg: ExperimentConfig, n: int) -> Path:
    return cfg.run_dir / "data" / f"N{n}"


def cell_dir(cfg: ExperimentConfig, n: int, variant: VariantKind, seed: int) -> Path:
    return cfg.run_dir / str(n) / VariantKind.parse(variant).value / str(seed)


# -- gen-data -------------------------------------------------------------------


def cmd_gen_data(cfg: ExperimentConfig, export_csv: bool = False) -> list[Path]:
    written = []
    d = cfg.dataset
    for n in cfg.dims:
        spec = d.spec(n)
        out = data_dir(cfg, n)
        splits = {"train": (d.n_train, (d.seed, 0)), "test": (d.n_test, (d.seed, 1))}
        for split, (count, seed) in splits.items():
            x = ds.sample(spec, count, seed=seed)
            ds.write_binary(out / f"{split}.tgfd", x)
            written.append(out / f"{split}.tgfd")
            if export_csv:
                ds.write_csv(out / f"{split}.csv", x)
        meta = {
            "K": d.k, "N": n, "alpha": d.alpha, "sigma2": d.sigma2, "seed": d.seed,
            "n_train": d.n_train, "n_test": d.n_test, "format": "TGFD v1",
        }
        (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        written.append(out / "meta.json")
        log.info("wrote N=%d datasets (%d / %d rows) to %s", n, d.n_train, d.n_test, out)
    return written


def load_split(cfg: ExperimentConfig, n: int, split: str) -> np.ndarray:
    path = data_dir(cfg, n) / f"{split}.tgfd"
    if not path.exists():
        raise MissingInputError(f"missing dataset {path}; run gen-data first")
    return ds.read_binary(path) * cfg.dataset.scale


# -- train ----------------------------------------------------------------------


def _fmt(value: Any) -> str:
    return repr(float(value)) if isinstance(value, float) else str(value)


def read_log(path: Path) -> list[dict[str, Any]]:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        row: dict[str, Any] = dict(r)
        for key in ("N", "seed", "epoch", "param_count"):
            row[key] = int(row[key])
        for key in ("train_loss", "train_fm_loss", "test_loss", "seconds"):
            row[key] = float(row[key])
        out.append(row)
    return out


def _write_log(path: Path, rows: Iterable[dict[str, Any]]) -> None:
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in LOG_COLUMNS])
    tmp.replace(path)


def _append_log(path: Path, row: dict[str, Any]) -> None:
    with open(path, "a", newline="") as fh:
        csv.writer(fh).writerow([_fmt(row[c]) for c in LOG_COLUMNS])


def _checkpoint_header(cfg: ExperimentConfig, model: TgfmModel, epoch: int) -> dict[str, Any]:
    return {
        "variant": model.kind.value,
        "N": model.n,
        "seed": model.seed,
        "seeds": list(cfg.seeds),
        "widths": [model.widths.main, model.widths.aux],
        "hidden_layers": model.hidden_layers,
        "param_count": model.param_count(),
        "epoch": epoch,
        "step": model.store.step,
        "config": config_dict(cfg),
    }


def save_cell_checkpoint(path: Path, cfg: ExperimentConfig, model: TgfmModel, epoch: int) -> None:
    save_checkpoint(path, _checkpoint_header(cfg, model, epoch), model.store.state_arrays())


def load_cell_model(path: Path) -> tuple[TgfmModel, dict[str, Any]]:
    header, arrays = load_checkpoint(path)
    model = TgfmModel(
        VariantKind.parse(header["variant"]),
        int(header["N"]),
        Widths(*header["widths"]),
        seed=int(header["seed"]),
        hidden_layers=int(header["hidden_layers"]),
    )
    model.store.load_state_arrays(arrays, step=header["step"])
    return model, header


def train_cell(cfg: ExperimentConfig, n: int, variant: VariantKind, seed: int, resume: bool = False) -> dict:
    """Train one (N, variant, seed) cell; returns a small status record."""
    out = cell_dir(cfg, n, variant, seed)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, log_path = out / CHECKPOINT, out / LOG_FILE
    train_x = load_split(cfg, n, "train")
    test_x = load_split(cfg, n, "test")
    tcfg = cfg.train_config(seed)
    start = 0
    if resume and ckpt.exists():
        model, header = load_cell_model(ckpt)
        start = int(header["epoch"])
        if model.kind is not variant or model.n != n or model.seed != seed:
            raise ConfigError(f"{ckpt} belongs to a different cell")
        _write_log(log_path, [r for r in read_log(log_path) if r["epoch"] <= start])
        if start >= tcfg.epochs:
            log.info("cell N=%d %s seed=%d already complete", n, variant.value, seed)
            return {"cell": [n, variant.value, seed], "epochs": start, "skipped": True}
    else:
        widths = match_parameters(cfg.budget, variant, n, aux_share=cfg.aux_share)
        model = TgfmModel(variant, n, widths, seed=seed)
        _write_log(log_path, [])
        save_cell_checkpoint(ckpt, cfg, model, 0)

    base = {"run_id": cfg.run_id, "variant": variant.value, "N": n, "seed": seed, "param_count": model.param_count()}

    def on_epoch(row: dict) -> None:
        _append_log(log_path, {**base, **row})
        save_cell_checkpoint(ckpt, cfg, model, row["epoch"])

    log.info("training N=%d %s seed=%d (%d params) from epoch %d", n, variant.value, seed, model.param_count(), start)
    rows = train(model, train_x, test_x, tcfg, start_epoch=start, on_epoch=on_epoch)
    return {"cell": [n, variant.value, seed], "epochs": start + len(rows), "skipped": False}


def _train_cell_job(args) -> dict:
    cfg, n, variant, seed, resume = args
    try:
        return train_cell(cfg, n, variant, seed, resume)
    except NumericError as exc:
        return {"cell": [n, variant.value, seed], "error": str(exc)}


def cmd_train(cfg: ExperimentConfig, jobs: int = 1, resume: bool = False) -> list[dict]:
    """Train every cell; numeric failures are collected and raised at the end."""
    for n in cfg.dims:
        for split in ("train", "test"):
            if not (data_dir(cfg, n) / f"{split}.tgfd").exists():
                raise MissingInputError(f"missing dataset for N={n}; run gen-data first")
    # Fail fast on infeasible budgets before any cell starts.
    for n in cfg.dims:
        for v in cfg.variants:
            match_parameters(cfg.budget, v, n, aux_share=cfg.aux_share)
    work = [(cfg, n, v, s, resume) for n, v, s in cfg.cells()]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_cell_job, work))
    else:
        results = [_train_cell_job(w) for w in work]
    failed = [r for r in results if "error" in r]
    if failed:
        raise NumericError("; ".join(f"{r['cell']}: {r['error']}" for r in failed))
    return results


# -- eval / sample ----------------------------------------------------------------


def _existing_cells(cfg: ExperimentConfig):
    found, missing = [], []
    for n, v, s in cfg.cells():
        path = cell_dir(cfg, n, v, s) / CHECKPOINT
        (found if path.exists() else missing).append((n, v, s, path))
    if not found:
        raise MissingInputError(f"no checkpoints under {cfg.run_dir}; run train first")
    return found, missing


def cmd_eval(cfg: ExperimentConfig) -> list[dict]:
    found, missing = _existing_cells(cfg)
    rows = []
    tests = {}
    for n, v, s, path in found:
        if n not in tests:
            tests[n] = load_split(cfg, n, "test")
        model, header = load_cell_model(path)
        metrics = evaluate(model, tests[n], cfg.train.eval_seed)
        rows.append({"N": n, "variant": v.value, "seed": s, "epoch": header["epoch"], **metrics})
    out = cfg.run_dir
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["N", "variant", "seed", "epoch", "fm_test_loss", "param_count"])
        writer.writeheader()
        for r in rows:
            writer.writerow({k: _fmt(val) for k, val in r.items()})
    payload = {"cells": rows, "missing": [[n, v.value, s] for n, v, s, _ in missing]}
    (out / "metrics.json").write_text(json.dumps(payload, indent=2) + "\n")
    return rows


def cmd_sample(cfg: ExperimentConfig) -> list[dict]:
    """Integrate ``sample.count`` base draws through every trained cell."""
    found, _ = _existing_cells(cfg)
    scale = cfg.dataset.scale
    summary = []
    for n, v, s, path in found:
        model, _ = load_cell_model(path)
        x0 = ds.stream((cfg.sample.seed,), SAMPLE_STREAM).standard_normal((cfg.sample.count, n))
        x1 = integrate(model, x0, cfg.integrator) / scale if cfg.sample.count else x0
        ds.write_binary(path.parent / "samples.tgfd", x1)
        dist = nearest_mean_distance(x1, ds.mixture_means(cfg.dataset.spec(n))) if len(x1) else np.zeros(0)
        summary.append({
            "N": n, "variant": v.value, "seed": s, "count": int(len(x1)),
            "nearest_mean_distance_median": float(np.median(dist)) if len(dist) else None,
            "nearest_mean_distance_mean": float(np.mean(dist)) if len(dist) else None,
        })
    (cfg.run_dir / "samples.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


# -- report -----------------------------------------------------------------------


@dataclass
class _Stat:
    median: float
    low: float
    high: float

    @classmethod
    def of(cls, values: list[float]) -> "_Stat":
        return cls(statistics.median(values), min(values), max(values))


def _final_rows(cfg: ExperimentConfig) -> tuple[list[dict], list[str]]:
    finals, gaps = [], []
    for n, v, s in cfg.cells():
        rows = read_log(cell_dir(cfg, n, v, s) / LOG_FILE)
        if not rows:
            gaps.append(f"N={n} {v.value} seed={s}: no log")
            continue
        last = rows[-1]
        if last["epoch"] < cfg.train.epochs:
            gaps.append(f"N={n} {v.value} seed={s}: {last['epoch']}/{cfg.train.epochs} epochs")
            continue
        finals.append(last)
    return finals, gaps


def build_report(cfg: ExperimentConfig) -> dict:
    finals, gaps = _final_rows(cfg)
    if not finals:
        raise MissingInputError(f"no completed training logs under {cfg.run_dir}")
    grouped: dict[tuple[int, str], list[dict]] = {}
    for r in finals:
        grouped.setdefault((r["N"], r["variant"]), []).append(r)
    stats = {}
    for key, rows in sorted(grouped.items()):
        stats[key] = {
            "seeds": sorted(r["seed"] for r in rows),
            "test": _Stat.of([r["test_loss"] for r in rows]),
            "train": _Stat.of([r["train_fm_loss"] for r in rows]),
            "param_count": int(statistics.median(r["param_count"] for r in rows)),
        }
    ref = REFERENCE_VARIANT.value
    ratios: dict[str, dict] = {"test": {}, "train": {}}
    for n in cfg.dims:
        if (n, ref) not in stats:
            if any(k[0] == n for k in stats):
                gaps.append(f"N={n}: reference variant {ref} missing, no normalized values")
            continue
        for split in ("test", "train"):
            cells = {k: v[split].median for k, v in stats.items() if k[0] == n}
            ratios[split].update(normalize_report(cells))

    rows = []
    for (n, variant), st in stats.items():
        ref_stat = stats.get((n, ref))
        row = {
            "N": n,
            "variant": variant,
            "n_seeds": len(st["seeds"]),
            "test_loss_median": st["test"].median,
            "test_loss_min": st["test"].low,
            "test_loss_max": st["test"].high,
            "test_ratio": ratios["test"].get((n, variant)),
            "test_ratio_min": st["test"].low / ref_stat["test"].median if ref_stat else None,
            "test_ratio_max": st["test"].high / ref_stat["test"].median if ref_stat else None,
            "train_fm_loss_median": st["train"].median,
            "train_fm_loss_min": st["train"].low,
            "train_fm_loss_max": st["train"].high,
            "train_ratio": ratios["train"].get((n, variant)),
            "train_ratio_min": st["train"].low / ref_stat["train"].median if ref_stat else None,
            "train_ratio_max": st["train"].high / ref_stat["train"].median if ref_stat else None,
            "param_count": st["param_count"],
            "param_budget_ratio": st["param_count"] / cfg.budget,
        }
        rows.append(row)

    headline = []
    for n in cfg.dims:
        med = {v: stats[(n, v)]["test"].median for (m, v) in stats if m == n}
        need = [k.value for k in HEADLINE_WINNERS + HEADLINE_BASELINES]
        if any(k not in med for k in need):
            headline.append({"N": n, "status": "incomplete"})
            continue
        worst_winner = max(med[k.value] for k in HEADLINE_WINNERS)
        best_baseline = min(med[k.value] for k in HEADLINE_BASELINES)
        headline.append({
            "N": n,
            "status": "reproduced" if worst_winner <= best_baseline else "reproduction failure",
            "tensor_gauge_medians": {k.value: med[k.value] for k in HEADLINE_WINNERS},
            "baseline_medians": {k.value: med[k.value] for k in HEADLINE_BASELINES},
        })

    params = []
    for n in cfg.dims:
        counts = {v: stats[(n, v)]["param_count"] for (m, v) in stats if m == n}
        within = {v: abs(c - cfg.budget) <= 0.1 * cfg.budget for v, c in counts.items()}
        entry: dict[str, Any] = {"N": n, "counts": counts, "within_10pct_of_budget": within}
        tensor = [counts[k.value] for k in HEADLINE_WINNERS if k.value in counts]
        if VariantKind.PlainVF.value in counts and tensor:
            ok = counts[VariantKind.PlainVF.value] >= max(tensor)
            entry["plainvf_not_smaller_than_tensor_gauge"] = ok
            if not ok:
                entry["note"] = "informational: widths come from the parameter search"
        params.append(entry)

    statuses = [h["status"] for h in headline]
    if all(s == "reproduced" for s in statuses):
        overall = "reproduced"
    elif "reproduction failure" in statuses:
        overall = "reproduction failure"
    else:
        overall = "incomplete"
    return {
        "run_id": cfg.run_id,
        "dims": list(cfg.dims),
        "budget": cfg.budget,
        "reference_variant": ref,
        "rows": rows,
        "headline": {"status": overall, "per_dimension": headline},
        "parameters": params,
        "gaps": gaps,
        "config": config_dict(cfg),
    }


REPORT_COLUMNS = [
    "N", "variant", "n_seeds",
    "test_loss_median", "test_loss_min", "test_loss_max", "test_ratio", "test_ratio_min", "test_ratio_max",
    "train_fm_loss_median", "train_fm_loss_min", "train_fm_loss_max",
    "train_ratio", "train_ratio_min", "train_ratio_max",
    "param_count", "param_budget_ratio",
]


def cmd_report(cfg: ExperimentConfig) -> dict:
    report = build_report(cfg)
    out = cfg.run_dir
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    with open(out / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for row in report["rows"]:
            writer.writerow(["" if row[c] is None else _fmt(row[c]) for c in REPORT_COLUMNS])

    order = [v.value for v in cfg.variants]
    labels = {v.value: v.label for v in cfg.variants}
    for split, fname, ylabel in (
        ("train", "loss_train.svg", "train FM loss / PlainVF + Tensor Gauge"),
        ("test", "loss_test.svg", "test FM loss / PlainVF + Tensor Gauge"),
    ):
        series = {v: {} for v in order}
        whisk = {v: {} for v in order}
        for row in report["rows"]:
            if row[f"{split}_ratio"] is None:
                continue
            series[row["variant"]][row["N"]] = row[f"{split}_ratio"]
            whisk[row["variant"]][row["N"]] = (row[f"{split}_ratio_min"], row[f"{split}_ratio_max"])
        grouped_bars(out / fname, list(cfg.dims), series, labels, whisk, ylabel=ylabel, reference=1.0)
    counts = {v: {} for v in order}
    for row in report["rows"]:
        counts[row["variant"]][row["N"]] = float(row["param_count"])
    grouped_bars(out / "params.svg", list(cfg.dims), counts, labels, ylabel="trainable parameters")
    status = report["headline"]["status"]
    if status == "reproduction failure":
        log.warning("headline ordering NOT reproduced: %s", report["headline"]["per_dimension"])
    else:
        log.info("headline ordering: %s", status)
    return report

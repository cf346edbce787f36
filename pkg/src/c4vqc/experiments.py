"""Experiment configs, single runs, architecture sweeps and their CSV/JSON outputs.

A config is one JSON document with sections ``dataset``, ``model``,
``cnn_pipeline`` (optional), ``train`` and ``sweep``; every seed is explicit.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .circuits import ARCHITECTURES, ModelParams, ModelSpec, build_model, save_checkpoint
from .cnn import CnnPipeline, layers_from_table, train_hybrid
from .data import Dataset, gen_shape_images, load_dataset, load_images, split, tetromino_dataset
from .errors import ConfigurationError, NumericalError, ValidationError
from .metrics import MetricsReport, classify, compute_metrics
from .training import TrainConfig, TrainHistory, as_arrays, evaluate, train

DEFAULT_CONFIG = {
    "dataset": {"kind": "tetromino", "n": 4, "sigma": 25.0, "copies": 1, "seed": 0,
                "test_ratio": 1 / 3, "split_seed": 0},
    "model": {"n": 4, "rotation_axis": "X", "observable_orbits": "random"},
    "train": {},
    "sweep": {"architectures": list(ARCHITECTURES), "seeds": [0, 1, 2, 3, 4], "n_layers": [10], "workers": 1},
}
METRIC_NAMES = ("accuracy", "precision", "recall", "f1")


def write_json(path, doc) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1, sort_keys=True, ensure_ascii=False), encoding="utf-8")
    os.replace(tmp, path)


def write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")  # RFC 4180 line endings
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def merge_config(config: dict | None) -> dict:
    """Defaults overlaid section by section with ``config``."""
    out = {k: dict(v) for k, v in DEFAULT_CONFIG.items()}
    for key, section in (config or {}).items():
        if key not in ("dataset", "model", "cnn_pipeline", "train", "sweep"):
            raise ConfigurationError(f"unknown config section {key!r}")
        if section is None:
            out.pop(key, None)
            continue
        out[key] = {**out.get(key, {}), **section}
    return out


def build_datasets(section: dict) -> tuple[Dataset, Dataset]:
    kind = section.get("kind", "tetromino")
    if kind == "tetromino":
        d = tetromino_dataset(section.get("n", 4), section.get("sigma", 25.0), section.get("copies", 1),
                              section.get("seed", 0))
    elif kind == "shapes":
        d = gen_shape_images(section.get("side", 16), section.get("per_class", 60), section.get("cell", 3),
                             section.get("sigma", 20.0), section.get("seed", 0), section.get("aligned", False))
    elif kind == "manifest":
        d = load_dataset(section["path"])
    elif kind == "images":
        d = load_images(section["path"], section.get("format", "png"), section.get("target_side", 16),
                        section.get("grayscale", True))
    else:
        raise ConfigurationError(f"unknown dataset kind {kind!r}")
    return split(d, section.get("test_ratio", 1 / 3), section.get("split_seed", 0))


def _metrics_or_none(d):
    return MetricsReport.from_dict(d) if d else None


@dataclass
class RunRecord:
    spec: ModelSpec
    config: TrainConfig
    seed: int
    history: TrainHistory
    train_metrics: MetricsReport | None
    test_metrics: MetricsReport | None
    wall_clock: float
    final_loss: float = math.nan
    params: list = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "config": self.config.to_dict(),
            "seed": self.seed,
            "history": self.history.to_dict(),
            "train_metrics": self.train_metrics.to_dict() if self.train_metrics else None,
            "test_metrics": self.test_metrics.to_dict() if self.test_metrics else None,
            "wall_clock": self.wall_clock,
            "final_loss": None if math.isnan(self.final_loss) else self.final_loss,
            "params": [float(v) for v in self.params],
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            spec=ModelSpec.from_dict(d["spec"]),
            config=TrainConfig.from_dict(d["config"]),
            seed=d["seed"],
            history=TrainHistory.from_dict(d["history"]),
            train_metrics=_metrics_or_none(d["train_metrics"]),
            test_metrics=_metrics_or_none(d["test_metrics"]),
            wall_clock=d["wall_clock"],
            final_loss=math.nan if d["final_loss"] is None else d["final_loss"],
            params=list(d["params"]),
            error=d["error"],
        )


def run_single(spec: ModelSpec, train_set: Dataset, test_set: Dataset, config: TrainConfig,
               cnn: dict | None = None) -> RunRecord:
    """Train one model; final metrics use the trained parameters on both splits."""
    start = time.perf_counter()
    dtype = np.float32 if config.dtype == "float32" else np.float64
    if cnn:
        images, labels = _tensor(train_set), train_set.labels
        test_images, test_labels = _tensor(test_set), test_set.labels
        pipeline = CnnPipeline.create(layers_from_table(cnn["n_w"], cnn["n_c"], cnn.get("n_p")),
                                      images.shape[3], cnn.get("seed", 0))
        model, params, history = train_hybrid(pipeline, spec, images, labels, config, test_images, test_labels,
                                              tuple(config.feature_range))
        f_train = model.forward(images, params, dtype)
        train_m = compute_metrics(classify(f_train), labels)
        test_m = compute_metrics(classify(model.forward(test_images, params, dtype)), test_labels)
        final_loss = float(np.mean((f_train - labels) ** 2))
        extra = [float(v) for f in pipeline.filters for v in f.ravel()]
        params_out = [float(v) for v in params] + extra
    else:
        model_params, history = train(spec, train_set, config, test_set)
        plan = build_model(spec)
        x, y = as_arrays(train_set, config.feature_range)
        xt, yt = as_arrays(test_set, config.feature_range)
        train_m, final_loss = evaluate(plan, model_params, x, y, dtype)
        test_m, _ = evaluate(plan, model_params, xt, yt, dtype)
        params_out = [float(v) for v in model_params.values]
    return RunRecord(spec, config, config.seed, history, train_m, test_m, time.perf_counter() - start,
                     final_loss, params_out)


def _tensor(d: Dataset) -> np.ndarray:
    """Images scaled to [0, 1] as an ``(N, H, W, C)`` tensor."""
    imgs = d.images / 255.0
    return imgs[..., None] if imgs.ndim == 3 else imgs


def _job(args):
    spec_d, cfg_d, data_section, cnn = args
    spec, cfg = ModelSpec.from_dict(spec_d), TrainConfig.from_dict(cfg_d)
    try:
        train_set, test_set = build_datasets(data_section)
        return run_single(spec, train_set, test_set, cfg, cnn).to_dict()
    except (ValidationError, ConfigurationError, NumericalError, FloatingPointError, ValueError) as exc:
        msg = f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"
        return RunRecord(spec, cfg, cfg.seed, TrainHistory(), None, None, 0.0, error=msg).to_dict()


def sweep_jobs(config: dict) -> list:
    cfg = merge_config(config)
    sweep = cfg["sweep"]
    seeds = list(sweep.get("seeds", []))
    if not seeds:
        raise ValidationError("the sweep needs at least one seed")
    archs = list(sweep.get("architectures", ARCHITECTURES))
    layers = list(sweep.get("n_layers", [10]))
    if not archs or not layers:
        raise ValidationError("the sweep needs architectures and layer counts")
    model = cfg["model"]
    jobs = []
    for arch in archs:
        for n_l in layers:
            for seed in seeds:
                spec = ModelSpec(arch, model.get("n", 4), n_l,
                                 random_orbit_seed=seed if arch == "NonEquivariant" else None,
                                 rotation_axis=model.get("rotation_axis", "X"),
                                 observable_orbits=model.get("observable_orbits", "random"))
                tc = TrainConfig.from_dict({**cfg["train"], "seed": seed})
                jobs.append((spec.to_dict(), tc.to_dict(), cfg["dataset"], cfg.get("cnn_pipeline")))
    return jobs


def compare_architectures(config: dict, out_dir=None, workers: int | None = None, progress=None):
    """Run the sweep; returns ``(records, summary_rows)`` and writes files if ``out_dir`` is set."""
    jobs = sweep_jobs(config)
    workers = workers or merge_config(config)["sweep"].get("workers", 1)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            docs = list(pool.map(_job, jobs))
    else:
        docs = []
        for job in jobs:
            docs.append(_job(job))
            if progress:
                progress(RunRecord.from_dict(docs[-1]))
    records = [RunRecord.from_dict(d) for d in docs]
    rows = summary_rows(records)
    if out_dir is not None:
        write_outputs(out_dir, records, rows)
    return records, rows


SUMMARY_HEADER = (["architecture", "n_layers", "runs", "failed", "mean_final_loss"]
                  + [f"{s}_{m}" for s in ("train", "test") for m in METRIC_NAMES])


def summary_rows(records: list[RunRecord]) -> list[list]:
    """Mean metrics per (architecture, n_layers), in first-seen order."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r.spec.architecture, r.spec.n_layers), []).append(r)
    rows = []
    for (arch, n_l), rs in groups.items():
        ok = [r for r in rs if r.ok]
        row = [arch, n_l, len(rs), len(rs) - len(ok)]
        row.append(_fmt(np.mean([r.final_loss for r in ok])) if ok else "")
        for split_name in ("train", "test"):
            for m in METRIC_NAMES:
                vals = [getattr(getattr(r, f"{split_name}_metrics"), m) for r in ok]
                row.append(_fmt(np.mean(vals)) if vals else "")
        rows.append(row)
    return rows


def _fmt(v: float) -> str:
    return repr(round(float(v), 12))


def minima_census(records: list[RunRecord]) -> dict:
    """Mean and minimum final training loss, and the share strictly below the mean.

    Losses within float rounding of the mean count as equal to it, so
    ``[0.2, 0.4, 0.6]`` gives 33.3% and not 66.7%.
    """
    losses = np.array([r.final_loss for r in records if r.ok], dtype=float)
    if losses.size < 2:
        raise ValidationError("minima census needs at least two finished runs")
    mean = float(losses.mean())
    return {
        "mean_final_loss": mean,
        "min_final_loss": float(losses.min()),
        "pct_below_mean": 100.0 * float(np.sum((losses < mean) & ~np.isclose(losses, mean, rtol=1e-12, atol=1e-15)))
        / losses.size,
        "runs": int(losses.size),
    }


def loss_curve_rows(records: list[RunRecord]) -> list[list]:
    """Per (architecture, n_layers, epoch): mean, min and max training loss."""
    groups: dict = {}
    for r in records:
        if r.ok:
            groups.setdefault((r.spec.architecture, r.spec.n_layers), []).append(r.history.losses)
    rows = []
    for (arch, n_l), curves in groups.items():
        length = min(len(c) for c in curves)
        stack = np.stack([c[:length] for c in curves])
        for e in range(length):
            rows.append([arch, n_l, e + 1, _fmt(stack[:, e].mean()), _fmt(stack[:, e].min()), _fmt(stack[:, e].max())])
    return rows


def f1_sample_rows(records: list[RunRecord]) -> list[list]:
    rows = []
    for r in records:
        if r.ok:
            rows.append([r.spec.architecture, r.spec.n_layers, r.seed, "train", _fmt(r.train_metrics.f1)])
            rows.append([r.spec.architecture, r.spec.n_layers, r.seed, "test", _fmt(r.test_metrics.f1)])
    return rows


def write_outputs(out_dir, records: list[RunRecord], rows: list[list]) -> None:
    out = Path(out_dir)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    for r in records:
        name = f"{r.spec.architecture}_nl{r.spec.n_layers}_seed{r.seed}"
        write_json(out / "runs" / f"{name}.json", r.to_dict())
        if r.ok and r.spec.n_params == len(r.params):
            save_checkpoint(out / "runs" / f"{name}.ckpt.json", r.spec, ModelParams(r.params))
    write_text(out / "summary.csv", csv_text(SUMMARY_HEADER, rows))
    write_text(out / "loss_curves.csv",
               csv_text(["architecture", "n_layers", "epoch", "mean_loss", "min_loss", "max_loss"],
                        loss_curve_rows(records)))
    write_text(out / "f1_samples.csv",
               csv_text(["architecture", "n_layers", "seed", "split", "f1"], f1_sample_rows(records)))
    census = {}
    for arch in dict.fromkeys(r.spec.architecture for r in records):
        try:
            census[arch] = minima_census([r for r in records if r.spec.architecture == arch])
        except ValidationError:
            continue
    write_json(out / "minima.json", census)


__all__ = [
    "DEFAULT_CONFIG",
    "RunRecord",
    "build_datasets",
    "classify",
    "compare_architectures",
    "compute_metrics",
    "csv_text",
    "f1_sample_rows",
    "loss_curve_rows",
    "merge_config",
    "minima_census",
    "run_single",
    "summary_rows",
    "sweep_jobs",
    "write_json",
    "write_outputs",
]

"""Experiment stages behind the command-line interface.

Every stage reads an :class:`ExperimentConfig`, writes its artifacts under
``config.out`` and finishes with a ``manifest_<stage>.json``. Metric CSVs
hold no wall-clock values so reruns are byte-identical.
"""
from __future__ import annotations

import csv
import json
import logging
import subprocess
import time
from pathlib import Path


from . import __version__
from . import checkpoint as ckpt
from .config import ExperimentConfig
from .data import DataBundle, load_csv, prepare, save_csv, window
from .diffcore import ConfigError
from .distill import best_entry, evaluate, sweep, train_student, write_sweep_csv
from .gradsuite import run_all
from .metrics import Metrics, compute_metrics, fmt, ha_predict
from .model import AblationMode, DcstModel
from .synth import generate
from .teacher import GnnModel, freeze, pretrain
from .training import TrainReport

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["model", "ablation", "split", "mae", "rmse", "mape"]
CURVE_COLUMNS = ["epoch", "train_loss", "soft_loss", "hard_loss", "val_mae", "val_rmse", "val_mape"]
ABLATION_COLUMNS = ["ablation", "val_mae", "val_rmse", "val_mape", "test_mae", "test_rmse", "test_mape"]


class StageError(RuntimeError):
    """A stage could not run (missing prerequisite, bad data)."""


def version_string() -> str:
    """``git describe``-style identifier; falls back to the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=here, capture_output=True, text=True, timeout=10, check=True,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        return f"v{__version__}"
    return out if out.startswith("v") else f"v{__version__}-g{out}"


# ------------------------------------------------------------------ data


def load_data(config: ExperimentConfig) -> tuple[DataBundle, dict | None]:
    """Bundle for the configured source. Synthetic data is regenerated from (config, seed)."""
    w = config.window
    if config.csv is not None:
        c = config.csv
        matrix, sensors, graph = load_csv(c.speeds, c.sensors, c.adjacency, c.step_minutes)
        descriptor = None
    else:
        ds = generate(config.synthetic, config.seed)
        matrix, sensors, graph, descriptor = ds.matrix, ds.sensors, ds.graph, ds.descriptor
    bundle = prepare(matrix, sensors, graph, config.fractions, w.input_len, w.horizon, w.horizon_mode)
    if len(bundle.train) == 0:
        raise StageError("training range is too short for a single window")
    return bundle, descriptor


def ha_metrics(data: DataBundle, part: str) -> Metrics:
    """Historical-average baseline scored like the models (same windows, same horizon mode)."""
    values = data.matrix.values
    horizon = data.horizon
    w = window(values, getattr(data.split, part), data.train.inputs.shape[2], horizon)
    if len(w) == 0:
        return Metrics(float("nan"), float("nan"), float("nan"))
    pred = ha_predict(values, data.split.train, w.origins, horizon, data.matrix.slots_per_day)
    truth = w.targets
    if data.horizon_mode == "mean":
        pred, truth = pred.mean(axis=2, keepdims=True), truth.mean(axis=2, keepdims=True)
    return compute_metrics(pred, truth)


# ------------------------------------------------------------------ writers


def _write_csv(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _curve_rows(report: TrainReport):
    for e in range(report.epochs_run):
        yield [e, fmt(report.train_loss[e], 6), fmt(report.soft_loss[e], 6), fmt(report.hard_loss[e], 6),
               fmt(report.val_mae[e]), fmt(report.val_rmse[e]), fmt(report.val_mape[e])]


def write_manifest(config: ExperimentConfig, stage: str, outputs: list[Path], extra: dict | None = None) -> Path:
    out = Path(config.out)
    manifest = {
        "stage": stage,
        "version": version_string(),
        "seed": config.seed,
        "config": config.to_dict(),
        "outputs": sorted(str(Path(p).relative_to(out)) for p in outputs),
    }
    if extra:
        manifest.update(extra)
    path = out / f"manifest_{stage}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _out(config: ExperimentConfig) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _suffix(ablation: str) -> str:
    return "" if ablation == AblationMode.FULL.value else f"_{ablation}"


def _load_teacher(out: Path) -> GnnModel:
    path = out / "teacher.ckpt"
    if not path.exists():
        raise StageError(f"{path} not found; run train-teacher first")
    return freeze(ckpt.load(path, kind="gnn"))


# ------------------------------------------------------------------ stages


def stage_synth(config: ExperimentConfig) -> list[Path]:
    if config.synthetic is None:
        raise ConfigError("synth needs a 'synthetic' data source")
    out = _out(config)
    ds = generate(config.synthetic, config.seed)
    paths = list(save_csv(out / "data", ds.matrix, ds.sensors, ds.graph).values())
    paths.append(ds.write_descriptor(out / "data" / "descriptor.json"))
    write_manifest(config, "synth", paths)
    return paths


def stage_train_teacher(config: ExperimentConfig) -> list[Path]:
    out = _out(config)
    data, _ = load_data(config)
    teacher = GnnModel(config.gnn, data.graph, config.seed)
    t0 = time.perf_counter()
    report = pretrain(teacher, data.train, data.val, data.stats, config.pretrain_settings(), config.pretrain.loss)
    freeze(teacher)
    paths = [
        ckpt.save(teacher, out / "teacher.ckpt", {"stage": "train-teacher", "best_epoch": report.best_epoch}),
        _write_csv(out / "teacher_curve.csv", CURVE_COLUMNS, _curve_rows(report)),
        _write_csv(out / "teacher_metrics.csv", METRIC_COLUMNS, [
            ["teacher", "full", part, *evaluate(teacher, data, part).as_row()] for part in ("val", "test")
        ]),
    ]
    write_manifest(config, "train-teacher", paths, {"wall_seconds": round(time.perf_counter() - t0, 1)})
    return paths


def _train_student(config: ExperimentConfig, stage: str, alpha: float, beta: float, name: str) -> list[Path]:
    out = _out(config)
    data, _ = load_data(config)
    teacher_path = out / "teacher.ckpt"
    if alpha > 0 or teacher_path.exists():
        teacher = _load_teacher(out)
    else:
        teacher = None
    dc = config.distill_config(alpha=alpha, beta=beta)
    student = DcstModel(config.dcst, data.sensors, config.seed)
    t0 = time.perf_counter()
    report = train_student(student, teacher, data, dc, config.ablation)
    sfx = _suffix(config.ablation)
    meta = {"stage": stage, "ablation": config.ablation, "alpha": alpha, "beta": beta, "best_epoch": report.best_epoch}
    paths = [
        ckpt.save(student, out / f"{name}{sfx}.ckpt", meta),
        _write_csv(out / f"{name}{sfx}_curve.csv", CURVE_COLUMNS, _curve_rows(report)),
        _write_csv(out / f"{name}{sfx}_metrics.csv", METRIC_COLUMNS, [
            [name, config.ablation, part, *evaluate(student, data, part, config.ablation).as_row()]
            for part in ("val", "test")
        ]),
    ]
    write_manifest(config, stage, paths, {"wall_seconds": round(time.perf_counter() - t0, 1)})
    return paths


def stage_distill(config: ExperimentConfig) -> list[Path]:
    return _train_student(config, "distill", config.distill.alpha, config.distill.beta, "student_kd")


def stage_train_student_solo(config: ExperimentConfig) -> list[Path]:
    return _train_student(config, "train-student-solo", 0.0, 1.0, "student_solo")


def stage_eval(config: ExperimentConfig) -> list[Path]:
    """Score HA plus every trained model found under ``out``; student rows carry the ablation tag.

    A student trained under the requested ablation is preferred; otherwise the
    full-mode checkpoint is evaluated with the ablation applied at inference.
    """
    out = _out(config)
    data, _ = load_data(config)
    abl = config.ablation
    rows = [["ha", "full", part, *ha_metrics(data, part).as_row()] for part in ("val", "test")]
    if (out / "teacher.ckpt").exists():
        teacher = _load_teacher(out)
        rows += [["teacher", "full", part, *evaluate(teacher, data, part).as_row()] for part in ("val", "test")]
    for name in ("student_solo", "student_kd"):
        path = out / f"{name}{_suffix(abl)}.ckpt"
        if not path.exists():
            path = out / f"{name}.ckpt"
        if not path.exists():
            continue
        student = ckpt.load(path, kind="dcst")
        rows += [[name, abl, part, *evaluate(student, data, part, abl).as_row()] for part in ("val", "test")]
    paths = [_write_csv(out / f"metrics{_suffix(abl)}.csv", METRIC_COLUMNS, rows)]
    write_manifest(config, "eval", paths)
    return paths


def stage_sweep(config: ExperimentConfig) -> list[Path]:
    out = _out(config)
    data, _ = load_data(config)
    teacher = _load_teacher(out)
    entries = sweep(lambda: DcstModel(config.dcst, data.sensors, config.seed), teacher, data, config.distill_config())
    curves = []
    for e in entries:
        curves += [[fmt(e.alpha, 2), fmt(e.beta, 2), *row] for row in _curve_rows(e.report)]
    best = best_entry(entries)
    paths = [
        write_sweep_csv(entries, out / "sweep.csv"),
        _write_csv(out / "sweep_curves.csv", ["alpha", "beta", *CURVE_COLUMNS], curves),
    ]
    write_manifest(config, "sweep", paths, {"best_by_val": {"alpha": best.alpha, "beta": best.beta}})
    return paths


def stage_ablate(config: ExperimentConfig) -> list[Path]:
    """Train one distilled student per ablation mode and tabulate val/test metrics."""
    out = _out(config)
    data, _ = load_data(config)
    teacher = _load_teacher(out) if config.distill.alpha > 0 else None
    rows = []
    for mode in AblationMode:
        student = DcstModel(config.dcst, data.sensors, config.seed)
        train_student(student, teacher, data, config.distill_config(), mode)
        rows.append([mode.value, *evaluate(student, data, "val", mode).as_row(), *evaluate(student, data, "test", mode).as_row()])
    paths = [_write_csv(out / "ablation.csv", ABLATION_COLUMNS, rows)]
    write_manifest(config, "ablate", paths)
    return paths


def stage_grad_check(config: ExperimentConfig) -> list[Path]:
    out = _out(config)
    results = run_all(range(config.seed, config.seed + 20))
    rows = [[r.name, r.seeds, f"{r.max_rel_err:.3e}", f"{r.tol:.0e}", "pass" if r.passed else "FAIL"] for r in results]
    paths = [_write_csv(out / "grad_check.csv", ["op", "seeds", "max_rel_err", "tol", "status"], rows)]
    write_manifest(config, "grad-check", paths)
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise StageError(f"gradient check failed for {failed}")
    return paths


STAGES = {
    "synth": stage_synth,
    "train-teacher": stage_train_teacher,
    "distill": stage_distill,
    "train-student-solo": stage_train_student_solo,
    "eval": stage_eval,
    "sweep": stage_sweep,
    "ablate": stage_ablate,
    "grad-check": stage_grad_check,
}


def run(config: ExperimentConfig, stage: str) -> list[Path]:
    """Validate ``config`` and execute one named stage."""
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}; choose from {sorted(STAGES)}")
    config.validate()
    return STAGES[stage](config)

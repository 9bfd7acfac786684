"""Run-directory stages tying data, models and metrics together.

A run directory holds one subdirectory per stage::

    config.txt          resolved configuration from ``generate``
    raw/                synthetic scenes (<id>.ppm, <id>.ele, labels.csv)
    clean/              outlier-cleaned scenes and cleaning.csv
    unet/               config.txt, history.csv, weights.gpw, predictions.csv
    interp/             NaN-free scenes and interpolation.csv
    scale_angle/        config.txt, history.csv, weights.gpw, predictions.csv, target_stats.txt
    autoencoder/        config.txt, history.csv, weights.gpw
    metrics.json, sensitivity.csv, mds.csv, figures/

Each stage checks that its inputs exist and raises :class:`MissingStageError`
naming the stage to run otherwise.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import plotting
from .checkpoint import load_weights, save_weights
from .config import RunConfig
from .data import (
    City,
    DatasetRecord,
    ElevationMask,
    GeoPoseLabel,
    RgbImage,
    area_resample,
    clean_outliers,
    load_dataset,
    load_ppm,
    rgb_channels,
    save_dataset,
    save_ele,
    scale_to_px_per_dam,
    stack_inputs,
)
from .mds import embed_latents
from .metrics import VARIANTS, MetricsReport, SensitivityResult, r_squared, summarize
from .models import (
    build_autoencoder,
    build_scale_angle,
    build_unet,
    encode,
    scale_angle_predict,
)
from .scenes import make_dataset
from .training import (
    Standardizer,
    TrainHistory,
    TrainingError,
    interpolate_dataset,
    pose_targets,
    predict_elevation_cm,
    split_dataset,
    train,
    unet_arrays,
)

logger = logging.getLogger(__name__)

# seed offsets keep the stages' random streams independent
_SEED_UNET, _SEED_SCALE_ANGLE, _SEED_AUTOENCODER = 0, 100, 200


class MissingStageError(RuntimeError):
    def __init__(self, stage: str, path: Path):
        super().__init__(f"missing prerequisite stage '{stage}': {path} not found; run `geopose {stage}` first")
        self.stage = stage
        self.path = path


class ProtocolError(RuntimeError):
    """A stage was asked to run on data that violates the processing order."""


STAGE_DIRS = {
    "generate": "raw",
    "clean": "clean",
    "train-unet": "unet",
    "interpolate": "interp",
    "train-scale-angle": "scale_angle",
    "train-autoencoder": "autoencoder",
}
_MARKERS = {
    "generate": "labels.csv",
    "clean": "labels.csv",
    "interpolate": "labels.csv",
    "train-unet": "weights.gpw",
    "train-scale-angle": "weights.gpw",
    "train-autoencoder": "weights.gpw",
}


@dataclass(frozen=True)
class Run:
    root: Path

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root))

    def dir(self, stage: str) -> Path:
        return self.root / STAGE_DIRS[stage]

    def require(self, stage: str) -> Path:
        d = self.dir(stage)
        if not (d / _MARKERS[stage]).exists():
            raise MissingStageError(stage, d / _MARKERS[stage])
        return d

    def base_config(self) -> RunConfig:
        path = self.root / "config.txt"
        return RunConfig.load(path) if path.exists() else RunConfig()

    def stage_config(self, stage: str) -> RunConfig:
        return RunConfig.load(self.require(stage) / "config.txt")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _check_size(records: Sequence[DatasetRecord], cfg: RunConfig) -> None:
    shapes = {r.elevation.values.shape for r in records}
    if shapes != {(cfg["size"], cfg["size"])}:
        raise ProtocolError(f"dataset image shapes {sorted(shapes)} do not match size={cfg['size']}")


def _save_training(d: Path, cfg: RunConfig, model, hist: TrainHistory) -> None:
    d.mkdir(parents=True, exist_ok=True)
    cfg.save(d / "config.txt")
    _write(d / "history.csv", hist.to_csv())
    save_weights(d / "weights.gpw", model.state_dict())
    # continue with the float32-rounded weights exactly as stored
    _load_model(d, model)


def _load_model(d: Path, model):
    model.load_state_dict(load_weights(d / "weights.gpw"))
    return model


def _csv(rows: list[list[object]], header: str) -> str:
    out = [header]
    for row in rows:
        out.append(",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in row))
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# data stages


def generate(out, cfg: RunConfig) -> list[DatasetRecord]:
    run = Run(out)
    records = make_dataset(cfg["n"], cfg["size"], cfg["seed"], cfg["nan_fraction"], cfg["outlier_fraction"])
    save_dataset(run.dir("generate"), records)
    run.root.mkdir(parents=True, exist_ok=True)
    cfg.save(run.root / "config.txt")
    cfg.save(run.dir("generate") / "config.txt")
    logger.info("generated %d scenes in %s", len(records), run.dir("generate"))
    return records


def clean(out, cfg: RunConfig) -> list[DatasetRecord]:
    run = Run(out)
    records = load_dataset(run.require("generate"))
    cleaned, rows = [], []
    for r in records:
        mask, n = clean_outliers(r.elevation, r.city)
        cleaned.append(DatasetRecord(r.id, r.city, r.rgb, mask, r.label))
        rows.append([r.id, r.city.value, n])
    d = run.dir("clean")
    save_dataset(d, cleaned)
    _write(d / "cleaning.csv", _csv(rows, "id,city,pixels_replaced"))
    cfg.save(d / "config.txt")
    logger.info("cleaned %d scenes; %d had outliers replaced", len(rows), sum(1 for r in rows if r[2]))
    return cleaned


def train_unet(out, cfg: RunConfig):
    run = Run(out)
    records = load_dataset(run.require("clean"))
    _check_size(records, cfg)
    tcfg = cfg.train_config("unet", _SEED_UNET)
    tr, va, withheld = split_dataset(records, tcfg.split_fraction, tcfg.seed, withhold_nan=True)
    logger.info("U-Net split: %d train, %d val, %d withheld (NaN)", len(tr), len(va), len(withheld))
    model = build_unet(cfg.unet_config(), tcfg.seed + 1)
    hist = train(model, unet_arrays(tr), unet_arrays(va), tcfg)
    d = run.dir("train-unet")
    _save_training(d, cfg, model, hist)
    rows = []
    for split, recs in (("train", tr), ("val", va), ("withheld", withheld)):
        if not recs:
            continue
        pred = predict_elevation_cm(model, recs, tcfg.batch_size)
        for r, p in zip(recs, pred):
            valid = ~np.isnan(r.elevation.values)
            err = float(np.mean(np.abs(p[valid] - r.elevation.values[valid].astype(np.float64))))
            rows.append([r.id, split, err])
    _write(d / "predictions.csv", _csv(rows, "id,split,mae_cm"))
    return model, hist


def interpolate(out, cfg: RunConfig) -> list[DatasetRecord]:
    run = Run(out)
    records = load_dataset(run.require("clean"))
    ucfg = run.stage_config("train-unet")
    unet = _load_model(run.dir("train-unet"), build_unet(ucfg.unet_config()))
    filled, counts = interpolate_dataset(unet, records)
    rows = [[rid, n] for rid, n in counts.items()]
    d = run.dir("interpolate")
    save_dataset(d, filled)
    _write(d / "interpolation.csv", _csv(rows, "id,pixels_filled"))
    cfg.save(d / "config.txt")
    logger.info("interpolated %d scenes", len(rows))
    return filled


# --------------------------------------------------------------------------
# Scale-Angle


def _require_nan_free(records: Sequence[DatasetRecord], source: Path) -> None:
    bad = [r.id for r in records if r.has_nan]
    if bad:
        raise ProtocolError(
            f"{len(bad)} records in {source} still contain NaN elevation (first: {bad[0]}); "
            "run `geopose interpolate` and train on its output"
        )


def _pose_split(records, cfg: RunConfig):
    tcfg = cfg.train_config("scale_angle", _SEED_SCALE_ANGLE)
    tr, va, _ = split_dataset(records, tcfg.split_fraction, tcfg.seed)
    return tcfg, tr, va


def fit_scale_angle(records: Sequence[DatasetRecord], cfg: RunConfig, channels: str | None = None):
    """Train one Scale-Angle variant; returns (model, standardizer, history, train, val)."""
    channels = channels or cfg["scale_angle.channels"]
    tcfg, tr, va = _pose_split(records, cfg)
    std = Standardizer.fit(pose_targets(tr))
    model = build_scale_angle(cfg.scale_angle_config(channels), tcfg.seed + 1)
    train_xy = (stack_inputs(tr, channels), std.forward(pose_targets(tr)))
    val_xy = (stack_inputs(va, channels), std.forward(pose_targets(va)))
    hist = train(model, train_xy, val_xy, tcfg)
    return model, std, hist, tr, va


def _stats_text(std: Standardizer) -> str:
    return (
        f"scale_mean={std.mean[0]!r}\nscale_std={std.std[0]!r}\n"
        f"angle_mean={std.mean[1]!r}\nangle_std={std.std[1]!r}\n"
    )


def _parse_stats(text: str) -> Standardizer:
    kv = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
    return Standardizer(
        (float(kv["scale_mean"]), float(kv["angle_mean"])),
        (float(kv["scale_std"]), float(kv["angle_std"])),
    )


def train_scale_angle(out, cfg: RunConfig, data_dir=None):
    run = Run(out)
    source = Path(data_dir) if data_dir else run.require("interpolate")
    records = load_dataset(source)
    _require_nan_free(records, source)
    _check_size(records, cfg)
    model, std, hist, tr, va = fit_scale_angle(records, cfg)
    d = run.dir("train-scale-angle")
    _save_training(d, cfg, model, hist)
    _write(d / "target_stats.txt", _stats_text(std))
    channels = cfg["scale_angle.channels"]
    rows = []
    for split, recs in (("train", tr), ("val", va)):
        pred = std.inverse(scale_angle_predict(model, stack_inputs(recs, channels)))
        for r, (s, a) in zip(recs, pred):
            rows.append([r.id, split, scale_to_px_per_dam(r.label.scale), float(s) * 1000.0, r.label.angle, float(a)])
    _write(
        d / "predictions.csv",
        _csv(rows, "id,split,scale_true_px_per_dam,scale_pred_px_per_dam,angle_true_rad,angle_pred_rad"),
    )
    return model, hist


def load_scale_angle(run: Run):
    d = run.require("train-scale-angle")
    cfg = RunConfig.load(d / "config.txt")
    model = _load_model(d, build_scale_angle(cfg.scale_angle_config()))
    std = _parse_stats((d / "target_stats.txt").read_text(encoding="utf-8"))
    return cfg, model, std


# --------------------------------------------------------------------------
# autoencoder and MDS


def train_autoencoder(out, cfg: RunConfig):
    run = Run(out)
    records = load_dataset(run.require("clean"))
    _check_size(records, cfg)
    tcfg = cfg.train_config("autoencoder", _SEED_AUTOENCODER)
    tr, va, _ = split_dataset(records, tcfg.split_fraction, tcfg.seed)
    model = build_autoencoder(cfg.autoencoder_config(), tcfg.seed + 1)
    x_tr = np.stack([rgb_channels(r.rgb) for r in tr])
    x_va = np.stack([rgb_channels(r.rgb) for r in va])
    hist = train(model, (x_tr, x_tr), (x_va, x_va), tcfg)
    _save_training(run.dir("train-autoencoder"), cfg, model, hist)
    return model, hist


def mds(out, cfg: RunConfig | None = None):
    run = Run(out)
    d = run.require("train-autoencoder")
    acfg = RunConfig.load(d / "config.txt")
    model = _load_model(d, build_autoencoder(acfg.autoencoder_config()))
    records = load_dataset(run.require("clean"))
    latents = encode(model, np.stack([rgb_channels(r.rgb) for r in records]))
    scales = np.array([scale_to_px_per_dam(r.label.scale) for r in records])
    angles = np.array([r.label.angle for r in records])
    emb = embed_latents([r.id for r in records], latents, scales)
    _write(run.root / "mds.csv", emb.to_csv(scales, angles))
    fig = run.root / "figures"
    plotting.embedding(fig / "mds_scale.png", emb.coords, scales, "scale (px/dam)")
    plotting.embedding(fig / "mds_angle.png", emb.coords, angles, "angle (rad)", cmap="twilight")
    return emb


# --------------------------------------------------------------------------
# evaluation


def _split_ids(path: Path) -> dict[str, str]:
    lines = path.read_text(encoding="utf-8").splitlines()[1:]
    return {line.split(",")[0]: line.split(",")[1] for line in lines if line}


def _history(path: Path) -> tuple[list[float], list[float]]:
    rows = [line.split(",") for line in path.read_text(encoding="utf-8").splitlines()[1:] if line]
    return [float(r[1]) for r in rows], [float(r[2]) for r in rows]


def evaluate(out, cfg: RunConfig | None = None) -> dict:
    """Table-style metrics for both models, written to ``metrics.json``.

    Elevation is scored per pixel in meters on the U-Net's NaN-free train and
    validation scenes. Scale (px/dam) and angle (rad) are scored per scene
    with the Scale-Angle model fed the stored elevation masks; an
    ``ensemble`` block repeats the validation scores with U-Net elevation as
    input instead.
    """
    run = Run(out)
    ucfg = run.stage_config("train-unet")
    unet = _load_model(run.dir("train-unet"), build_unet(ucfg.unet_config()))
    scfg, sa, std = load_scale_angle(run)
    clean_records = {r.id: r for r in load_dataset(run.require("clean"))}
    interp_records = {r.id: r for r in load_dataset(run.require("interpolate"))}
    report = MetricsReport()
    fig = run.root / "figures"

    unet_split = _split_ids(run.dir("train-unet") / "predictions.csv")
    for split in ("train", "val"):
        recs = [clean_records[i] for i, s in unet_split.items() if s == split]
        pred = predict_elevation_cm(unet, recs)
        true = np.stack([r.elevation.values for r in recs]).astype(np.float64)
        report.set("elevation", split, true / 100.0, pred / 100.0)
        if split == "val":
            plotting.elevation_panel(fig / "elevation_example.png", recs[0].rgb.pixels, true[0], pred[0], recs[0].id)

    channels = scfg["scale_angle.channels"]
    sa_split = _split_ids(run.dir("train-scale-angle") / "predictions.csv")
    ensemble: dict[str, dict] = {}
    for split in ("train", "val"):
        recs = [interp_records[i] for i in sorted(sa_split) if sa_split[i] == split]
        y = pose_targets(recs)
        pred = std.inverse(scale_angle_predict(sa, stack_inputs(recs, channels)))
        report.set("scale", split, y[:, 0] * 1000.0, pred[:, 0] * 1000.0)
        report.set("angle", split, y[:, 1], pred[:, 1])
        if split == "val":
            for t, col, k, unit in (("scale", 0, 1000.0, "px/dam"), ("angle", 1, 1.0, "rad")):
                plotting.scatter_true_pred(
                    fig / f"{t}_val.png", y[:, col] * k, pred[:, col] * k, t, unit, report.values[t]["val"]["r2"]
                )
            if channels != "rgb":
                elev = predict_elevation_cm(unet, recs)
                pred_e = std.inverse(scale_angle_predict(sa, stack_inputs(recs, channels, elevations=elev)))
                ensemble = {
                    "scale": summarize(y[:, 0] * 1000.0, pred_e[:, 0] * 1000.0),
                    "angle": summarize(y[:, 1], pred_e[:, 1]),
                }
    if ensemble:
        report.extra["ensemble_val"] = ensemble
    report.extra["counts"] = {
        "elevation": {s: sum(1 for v in unet_split.values() if v == s) for s in ("train", "val")},
        "pose": {s: sum(1 for v in sa_split.values() if v == s) for s in ("train", "val")},
    }
    plotting.loss_curves(
        fig / "loss_curves.png",
        {
            "U-Net": _history(run.dir("train-unet") / "history.csv"),
            "Scale-Angle": _history(run.dir("train-scale-angle") / "history.csv"),
        },
    )
    result = report.to_dict()
    _write(run.root / "metrics.json", json.dumps(result, indent=2, sort_keys=False) + "\n")
    return result


# --------------------------------------------------------------------------
# sensitivity


def run_sensitivity(records: Sequence[DatasetRecord], cfg: RunConfig) -> tuple[SensitivityResult, dict]:
    """Train the RGB-Only, RGB-Elevation and Elevation-Only variants with one config.

    Every variant sees the same split, seed and hyperparameters; only the
    input channels differ. Returns the result and each variant's history.
    """
    _require_nan_free(records, Path("<sensitivity input>"))
    r2: dict[str, dict[str, float]] = {}
    histories = {}
    n_val = 0
    for variant in VARIANTS:
        try:
            model, std, hist, _, va = fit_scale_angle(records, cfg, variant)
        except (TrainingError, ValueError) as exc:
            raise TrainingError(f"sensitivity variant {variant!r} failed: {exc}") from exc
        y = pose_targets(va)
        pred = std.inverse(scale_angle_predict(model, stack_inputs(va, variant)))
        r2[variant] = {"scale": r_squared(y[:, 0], pred[:, 0]), "angle": r_squared(y[:, 1], pred[:, 1])}
        histories[variant] = hist
        n_val = len(va)
        logger.info("variant %s: val R2 scale %.4f angle %.4f", variant, r2[variant]["scale"], r2[variant]["angle"])
    return SensitivityResult(r2, n_val, n_val), histories


def sensitivity(out, cfg: RunConfig, data_dir=None) -> SensitivityResult:
    run = Run(out)
    source = Path(data_dir) if data_dir else run.require("interpolate")
    records = load_dataset(source)
    _require_nan_free(records, source)
    _check_size(records, cfg)
    result, histories = run_sensitivity(records, cfg)
    _write(run.root / "sensitivity.csv", result.to_csv())
    d = run.root / "sensitivity"
    d.mkdir(parents=True, exist_ok=True)
    cfg.save(d / "config.txt")
    for variant, hist in histories.items():
        _write(d / f"history_{variant}.csv", hist.to_csv())
    return result


# --------------------------------------------------------------------------
# inference


def predict(run_dir, inputs: Sequence, dest=None) -> list[tuple[str, float, float]]:
    """Elevation, scale and angle for PPM images using a trained run.

    Images larger than the model input are area-averaged down to it. Writes
    ``<stem>.ele`` (cm) per input and ``predictions.csv`` into ``dest``.
    """
    run = Run(run_dir)
    ucfg = run.stage_config("train-unet")
    unet = _load_model(run.dir("train-unet"), build_unet(ucfg.unet_config()))
    scfg, sa, std = load_scale_angle(run)
    size = ucfg["size"]
    dest = Path(dest) if dest else run.root / "predict"
    dest.mkdir(parents=True, exist_ok=True)
    rows = []
    for path in inputs:
        path = Path(path)
        img = load_ppm(path)
        if (img.height, img.width) != (size, size):
            if img.height < size or img.width < size:
                raise ValueError(f"{path}: {img.width}x{img.height} is smaller than the model input {size}")
            img = RgbImage(np.clip(np.rint(area_resample(img.pixels, size, size)), 0, 255).astype(np.uint8))
        elev = predict_elevation_cm(unet, [_bare_record(path.stem, img)])[0]
        save_ele(dest / f"{path.stem}.ele", ElevationMask(elev.astype(np.float32)))
        rec = _bare_record(path.stem, img, elev)
        s, a = std.inverse(scale_angle_predict(sa, stack_inputs([rec], scfg["scale_angle.channels"])))[0]
        rows.append((path.stem, float(s) * 1000.0, float(a)))
    _write(dest / "predictions.csv", _csv([list(r) for r in rows], "id,scale_px_per_dam,angle_rad"))
    return rows


def _bare_record(rid: str, img: RgbImage, elev_cm=None) -> DatasetRecord:
    values = np.zeros((img.height, img.width), np.float32) if elev_cm is None else elev_cm
    return DatasetRecord(rid, City.JACKSONVILLE, img, ElevationMask(values), GeoPoseLabel(1.0, 0.0))


# --------------------------------------------------------------------------
# everything


def run_all(out, cfg: RunConfig, with_sensitivity: bool = False) -> dict:
    """generate -> clean -> train-unet -> interpolate -> train-scale-angle ->
    train-autoencoder -> evaluate -> mds (-> sensitivity)."""
    generate(out, cfg)
    clean(out, cfg)
    train_unet(out, cfg)
    interpolate(out, cfg)
    train_scale_angle(out, cfg)
    train_autoencoder(out, cfg)
    metrics = evaluate(out)
    mds(out)
    if with_sensitivity:
        sensitivity(out, cfg)
    return metrics


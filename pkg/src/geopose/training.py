"""Dataset splitting, the mini-batch Adam loop, and model-based NaN filling."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ops
from .data import ELEVATION_NORM_CM, DatasetRecord, ElevationMask, rgb_channels
from .models import Module, UNet, unet_predict
from .optim import AdamState, adam_step
from .tensor import Tensor

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    split_fraction: float = 0.85
    batch_size: int = 32
    learning_rate: float = 1e-3
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0
    min_delta: float = 1e-5
    restore_best: bool = True

    def __post_init__(self):
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError(f"split_fraction must be in (0, 1), got {self.split_fraction}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.max_epochs < 1 or self.patience < 0:
            raise ValueError("max_epochs must be >= 1 and patience >= 0")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    stopping_epoch: int = 0
    best_epoch: int = 0

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,seconds"]
        for i, (tr, va, s) in enumerate(zip(self.train_loss, self.val_loss, self.seconds), start=1):
            lines.append(f"{i},{float(tr)!r},{float(va)!r},{s:.3f}")
        return "\n".join(lines) + "\n"


def split_dataset(
    records: Sequence[DatasetRecord], fraction: float, seed: int, withhold_nan: bool = False
) -> tuple[list[DatasetRecord], list[DatasetRecord], list[DatasetRecord]]:
    """Seeded shuffle, then (train, val, withheld).

    With ``withhold_nan`` every record carrying a NaN pixel goes to
    ``withheld``; the rest is split with ``round(fraction * n)`` (halves
    rounded up) records in train.
    """
    if not records:
        raise ValueError("cannot split an empty dataset")
    order = np.random.default_rng(seed).permutation(len(records))
    shuffled = [records[i] for i in order]
    withheld = [r for r in shuffled if withhold_nan and r.has_nan]
    pool = [r for r in shuffled if not (withhold_nan and r.has_nan)]
    n_train = int(math.floor(fraction * len(pool) + 0.5))
    train, val = pool[:n_train], pool[n_train:]
    if not train or not val:
        raise ValueError(
            f"split of {len(pool)} usable records at {fraction} leaves "
            f"{len(train)} train / {len(val)} val"
        )
    return train, val, withheld


LossFn = Callable[[Tensor, np.ndarray], Tensor]
LOSSES: dict[str, LossFn] = {"mse": ops.mse_loss, "mae": ops.mae_loss}


def evaluate_loss(model: Module, x: np.ndarray, y: np.ndarray, loss: str = "mse", batch_size: int = 32) -> float:
    """Eval-mode loss over a whole array, batch losses weighted by size."""
    fn = LOSSES[loss]
    total = 0.0
    for i in range(0, len(x), batch_size):
        out = model.forward(Tensor(x[i : i + batch_size]), training=False)
        total += fn(out, y[i : i + batch_size]).item() * len(out.data)
    return total / len(x)


def train(
    model: Module,
    train_xy: tuple[np.ndarray, np.ndarray],
    val_xy: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
    loss: str = "mse",
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> TrainHistory:
    """Mini-batch Adam with early stopping on validation loss.

    Training stops once the validation loss has gone ``patience + 1``
    consecutive epochs without improving on the best by ``min_delta``; the
    best epoch's weights are then restored. Batches are taken in the stored
    order every epoch.
    """
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}")
    fn = LOSSES[loss]
    x_tr, y_tr = train_xy
    x_va, y_va = val_xy
    if len(x_tr) == 0 or len(x_va) == 0:
        raise ValueError("train and validation sets must be non-empty")
    params = model.parameters()
    state = AdamState.for_params(params, learning_rate=cfg.learning_rate)
    hist = TrainHistory()
    best_val = math.inf
    best_state = model.state_dict()
    wait = 0
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        running = 0.0
        for b, i in enumerate(range(0, len(x_tr), cfg.batch_size), start=1):
            xb, yb = x_tr[i : i + cfg.batch_size], y_tr[i : i + cfg.batch_size]
            model.zero_grad()
            value = fn(model.forward(Tensor(xb), training=True), yb)
            lv = value.item()
            if not math.isfinite(lv):
                raise TrainingError(f"non-finite loss {lv} at epoch {epoch}, batch {b}")
            value.backward()
            adam_step(params, [p.grad for p in params], state)
            running += lv * len(xb)
        train_loss = running / len(x_tr)
        val_loss = evaluate_loss(model, x_va, y_va, loss, cfg.batch_size)
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        hist.train_loss.append(train_loss)
        hist.val_loss.append(val_loss)
        hist.seconds.append(time.perf_counter() - t0)
        hist.stopping_epoch = epoch
        logger.info("epoch %d train %.6f val %.6f (%.1fs)", epoch, train_loss, val_loss, hist.seconds[-1])
        if on_epoch is not None:
            on_epoch(epoch, train_loss, val_loss)
        if val_loss < best_val - cfg.min_delta:
            best_val = val_loss
            hist.best_epoch = epoch
            best_state = model.state_dict()
            wait = 0
        else:
            wait += 1
            if wait > cfg.patience:
                break
    if cfg.restore_best and hist.best_epoch:
        model.load_state_dict(best_state)
    return hist


# --------------------------------------------------------------------------
# per-model data assembly


def unet_arrays(records: Sequence[DatasetRecord]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([rgb_channels(r.rgb) for r in records])
    y = np.stack([r.elevation.values.astype(np.float64)[..., None] for r in records]) / ELEVATION_NORM_CM
    if np.isnan(y).any():
        raise ValueError("U-Net targets contain NaN; withhold NaN records first")
    return x, y


def predict_elevation_cm(unet: UNet, records: Sequence[DatasetRecord], batch_size: int = 32) -> np.ndarray:
    """U-Net elevation for each record, (N, H, W) float64 centimeters."""
    x = np.stack([rgb_channels(r.rgb) for r in records])
    return unet_predict(unet, x, batch_size)[..., 0] * ELEVATION_NORM_CM


def interpolate_nans_with_model(unet: UNet, record: DatasetRecord) -> DatasetRecord:
    """Fill the record's NaN elevation pixels with the U-Net's prediction.

    Valid pixels are copied bit for bit; only NaN positions change.
    """
    if not record.has_nan:
        raise ValueError(f"{record.id}: no NaN pixels to interpolate")
    pred = predict_elevation_cm(unet, [record])[0].astype(np.float32)
    holes = np.isnan(record.elevation.values)
    if np.isnan(pred[holes]).any():
        raise ValueError(f"{record.id}: model prediction contains NaN")
    values = record.elevation.values.copy()
    values[holes] = pred[holes]
    return DatasetRecord(record.id, record.city, record.rgb, ElevationMask(values), record.label)


def interpolate_dataset(unet: UNet, records: Sequence[DatasetRecord]) -> tuple[list[DatasetRecord], dict[str, int]]:
    """Fill every NaN-bearing record; NaN-free records pass through untouched.

    Returns the new records and, per filled record id, how many pixels were
    filled. Running it again on its own output changes nothing.
    """
    out, filled = [], {}
    for r in records:
        if r.has_nan:
            filled[r.id] = r.elevation.nan_count
            r = interpolate_nans_with_model(unet, r)
        out.append(r)
    return out, filled


@dataclass(frozen=True)
class Standardizer:
    """Per-column z-scoring of regression targets."""

    mean: tuple[float, ...]
    std: tuple[float, ...]

    @classmethod
    def fit(cls, y: np.ndarray) -> "Standardizer":
        y = np.asarray(y, dtype=np.float64)
        std = y.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(tuple(float(v) for v in y.mean(axis=0)), tuple(float(v) for v in std))

    def forward(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - np.array(self.mean)) / np.array(self.std)

    def inverse(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * np.array(self.std) + np.array(self.mean)


def pose_targets(records: Sequence[DatasetRecord]) -> np.ndarray:
    """(N, 2) raw targets: scale in px/cm, angle in radians."""
    return np.array([[r.label.scale, r.label.angle] for r in records], dtype=np.float64)

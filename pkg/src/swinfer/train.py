"""Training-loop orchestration shared by the CLI and the test suites.

A run is fully determined by (config, seed, data): data splitting,
balancing, weight init, batch order and dropout all draw from sub-seeds
of the config seed, and every emitted artifact (curve CSV, checkpoints)
is byte-reproducible. For that reason the curve's wall_seconds column
is a deterministic placeholder (0.000); real per-epoch timing goes to
the progress log instead of the artifacts.
"""

import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import checkpoint_save
from .config import RunConfig
from .data import (
    DatasetManifest,
    balance_classes,
    load_fer_csv,
    load_image_dir,
    make_synthetic_manifest,
    prepare_arrays,
    shuffled_batch_indices,
    split,
)
from .errors import ConfigError, DataError, NumericalError
from .model import forward, init_parameters
from .optim import Optimizer, lr_schedule
from .rng import SplitMix64, derive_seed

CURVE_HEADER = "epoch,lr,train_loss,train_acc,val_loss,val_acc,wall_seconds"


def load_sources(sources, config: RunConfig) -> DatasetManifest:
    """Build one manifest from source strings.

    ``*.csv`` loads a FER-style CSV, ``synthetic:N`` generates N seeded
    samples per class, anything else is an image directory.
    """
    if not sources:
        raise ConfigError("no data sources given (use --data or data_sources)")
    manifest = None
    for src in sources:
        if src.startswith("synthetic:"):
            per_class = int(src.split(":", 1)[1])
            part = make_synthetic_manifest(
                per_class, config.image_size, config.num_classes, config.seed
            )
        elif src.lower().endswith(".csv"):
            part = load_fer_csv(src, config.num_classes)
        else:
            part = load_image_dir(src, config.num_classes)
        manifest = part if manifest is None else manifest.merged_with(part)
    return manifest


@dataclass
class CurveRow:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    wall_seconds: float = 0.0

    def to_csv(self) -> str:
        return (f"{self.epoch},{self.lr!r},{self.train_loss!r},"
                f"{self.train_acc!r},{self.val_loss!r},{self.val_acc!r},"
                f"{self.wall_seconds:.3f}")


@dataclass
class TrainResult:
    curve: list[CurveRow] = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = 0.0
    params: dict = field(default_factory=dict)
    best_params: dict = field(default_factory=dict)
    momentum: dict = field(default_factory=dict)
    stopped_early: bool = False

    def curve_csv(self) -> str:
        return "\n".join([CURVE_HEADER] + [r.to_csv() for r in self.curve]) + "\n"


def evaluate_split(params, swin_cfg, images: np.ndarray, labels: np.ndarray,
                   batch_size: int, logit_limit: int | None = None
                   ) -> tuple[float, float, np.ndarray]:
    """Loss, accuracy and predictions over a prepared array split.

    `logit_limit` restricts predictions (and the loss softmax) to the
    first k logits: the comparison mode for scoring an 8-class head on
    7-class data.
    """
    n = len(labels)
    if n == 0:
        return 0.0, 0.0, np.zeros(0, dtype=np.int64)
    losses = []
    preds = np.empty(n, dtype=np.int64)
    with T.no_grad():
        for start in range(0, n, batch_size):
            sl = slice(start, min(start + batch_size, n))
            logits, _ = forward(T.Tensor(images[sl]), params, swin_cfg)
            if logit_limit is not None:
                logits = logits[:, :logit_limit]
            preds[sl] = np.argmax(logits.data, axis=1)
            losses.append(
                float(T.cross_entropy(logits, labels[sl]).item()) * (sl.stop - sl.start)
            )
    return sum(losses) / n, float((preds == labels).mean()), preds


def run_training(
    config: RunConfig,
    manifest: DatasetManifest | None = None,
    stop_at_train_acc: float | None = None,
    log=print,
) -> TrainResult:
    """Split, balance, then run the epoch loop; returns the curve and the
    best parameters (highest validation accuracy, earliest epoch on ties)."""
    config.validate()
    T.set_precision(config.precision)
    swin_cfg = config.swin()
    if manifest is None:
        manifest = load_sources(config.data_sources, config)
    if manifest.class_mode != config.num_classes:
        raise ConfigError(
            f"manifest has {manifest.class_mode} classes, config expects "
            f"{config.num_classes}"
        )

    split(manifest, config.split_fractions, config.seed)
    manifest = balance_classes(manifest, config.seed)
    train_samples = manifest.subset("train")
    if not train_samples:
        raise DataError("train split is empty")
    train_images, train_labels = prepare_arrays(train_samples, config.image_size)
    val_images, val_labels = prepare_arrays(manifest.subset("val"), config.image_size)

    params = init_parameters(swin_cfg, config.seed)
    optimizer = Optimizer(params, config.base_lr, config.momentum,
                          config.rho, config.sam_enabled)

    result = TrainResult(params=params)
    best_params: dict[str, np.ndarray] = {}
    batch_seed = derive_seed(config.seed, "batch")
    drop_seed = derive_seed(config.seed, "dropout")

    for epoch in range(config.epochs):
        optimizer.epoch = epoch
        epoch_started = time.perf_counter()
        batch_rng = SplitMix64(derive_seed(batch_seed, f"epoch:{epoch}"))
        losses, correct, seen = [], 0, 0
        for step, idx in enumerate(
            shuffled_batch_indices(len(train_samples), config.batch_size, batch_rng)
        ):
            images = T.Tensor(train_images[idx])
            labels = train_labels[idx]
            drop_rng = np.random.Generator(np.random.PCG64(
                derive_seed(drop_seed, f"{epoch}:{step}")
            ))
            stats = {}

            def loss_backward():
                logits, _ = forward(images, params, swin_cfg, train=True,
                                    drop_rng=drop_rng)
                loss = T.cross_entropy(logits, labels)
                T.backward(loss)
                if "preds" not in stats:  # first pass = loss/preds at w
                    stats["preds"] = np.argmax(logits.data, axis=1)
                return loss.item()

            loss_value = optimizer.step(loss_backward)
            if not np.isfinite(loss_value):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {step}"
                )
            losses.append(loss_value)
            correct += int((stats["preds"] == labels).sum())
            seen += len(labels)

        train_loss = float(np.mean(losses)) if losses else 0.0
        train_acc = correct / seen if seen else 0.0
        val_loss, val_acc, _ = evaluate_split(
            params, swin_cfg, val_images, val_labels, config.batch_size
        )
        row = CurveRow(epoch, lr_schedule(epoch, config.base_lr),
                       train_loss, train_acc, val_loss, val_acc)
        result.curve.append(row)
        log(f"epoch {epoch:3d} lr {row.lr:.2e} train {train_loss:.4f}/{train_acc:.3f} "
            f"val {val_loss:.4f}/{val_acc:.3f} "
            f"({time.perf_counter() - epoch_started:.1f}s)")

        if not best_params or val_acc > result.best_val_acc:
            result.best_val_acc = val_acc
            result.best_epoch = epoch
            best_params = {k: t.data.copy() for k, t in params.items()}

        if stop_at_train_acc is not None and train_acc >= stop_at_train_acc:
            result.stopped_early = True
            break

    result.params = params
    result.best_params = best_params
    result.momentum = optimizer.velocity
    return result


def write_artifacts(result: TrainResult, config: RunConfig) -> dict[str, str]:
    """Emit curve.csv plus `last` and `best` checkpoints."""
    os.makedirs(config.output_dir, exist_ok=True)
    paths = {
        "curve": os.path.join(config.output_dir, "curve.csv"),
        "last": os.path.join(config.output_dir, "last.ckpt"),
        "best": os.path.join(config.output_dir, "best.ckpt"),
    }
    with open(paths["curve"], "w", encoding="utf-8") as fh:
        fh.write(result.curve_csv())
    last_epoch = result.curve[-1].epoch if result.curve else 0
    checkpoint_save(paths["last"], result.params, config, last_epoch,
                    result.best_val_acc, momentum=result.momentum or None)
    best_tensors = {k: T.Tensor(v, requires_grad=True)
                    for k, v in result.best_params.items()}
    checkpoint_save(paths["best"], best_tensors, config, result.best_epoch,
                    result.best_val_acc)
    return paths

"""Dataset ingest, label remapping, augmentation, balancing and batching.

Canonical class IDs (7-class mode uses 0-6; 8-class mode adds contempt):

    0 fear, 1 sadness, 2 happy, 3 anger, 4 disgust, 5 surprise,
    6 neutral, 7 contempt

Supported sources:
  * FER-style CSV: header ``emotion,pixels,Usage``; pixels are 2304
    space-separated integers in [0, 255], row-major 48x48 grayscale.
    Source labels are remapped (0 angry->3, 1 disgust->4, 2 fear->0,
    3 happy->2, 4 sad->1, 5 surprise->5, 6 neutral->6) and the single
    channel is replicated to RGB.
  * Image directory: ``<root>/<class-name>/*.{png,jpg,jpeg,bmp}`` with
    lowercase canonical class names.
  * Synthetic: seeded per-class texture patterns, for smoke and overfit
    runs (source string ``synthetic:<per_class>``).

Every stochastic step draws from a seeded SplitMix64 stream, so the
whole pipeline is bitwise reproducible for a fixed (inputs, seed).
"""

import csv
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, LabelError
from .rng import SplitMix64, derive_seed

CLASS_NAMES = ("fear", "sadness", "happy", "anger", "disgust", "surprise",
               "neutral", "contempt")

# FER-2013 source scheme -> canonical IDs
FER_REMAP = {0: 3, 1: 4, 2: 0, 3: 2, 4: 1, 5: 5, 6: 6}

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


def class_name(label: int) -> str:
    return CLASS_NAMES[label]


def name_to_label(name: str, class_mode: int) -> int:
    lowered = name.lower()
    if lowered not in CLASS_NAMES[:class_mode]:
        raise LabelError(f"unknown class name '{name}' in {class_mode}-class mode")
    return CLASS_NAMES.index(lowered)


@dataclass
class LabeledSample:
    image: np.ndarray  # uint8 [H, W, 3]
    label: int
    ref: str  # source path, "row:N", or synthetic tag
    provenance: str = "original"  # or "augmented:<source ref>:<transform>"
    split: str = ""  # "", "train", "val", "test"

    @property
    def augmented(self) -> bool:
        return self.provenance != "original"


@dataclass
class DatasetManifest:
    samples: list[LabeledSample] = field(default_factory=list)
    class_mode: int = 7
    sources: list[str] = field(default_factory=list)
    seed: int | None = None

    def class_counts(self, split: str | None = None) -> np.ndarray:
        counts = np.zeros(self.class_mode, dtype=np.int64)
        for s in self.samples:
            if split is None or s.split == split:
                counts[s.label] += 1
        return counts

    def subset(self, split: str) -> list[LabeledSample]:
        return [s for s in self.samples if s.split == split]

    def merged_with(self, other: "DatasetManifest") -> "DatasetManifest":
        if other.class_mode != self.class_mode:
            raise ConfigError("cannot merge manifests with different class modes")
        return DatasetManifest(
            samples=self.samples + other.samples,
            class_mode=self.class_mode,
            sources=self.sources + other.sources,
            seed=self.seed,
        )

    def export_lines(self) -> list[str]:
        """One record per line: path_or_row,label_id,split,provenance."""
        return [f"{s.ref},{s.label},{s.split},{s.provenance}" for s in self.samples]


# -- loaders -------------------------------------------------------------------


def load_fer_csv(path: str, class_mode: int = 7) -> DatasetManifest:
    """Decode a FER-style CSV into a manifest (labels remapped, RGB)."""
    samples = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:3]] != ["emotion", "pixels", "Usage"]:
            raise DataError(f"{path}: expected header 'emotion,pixels,Usage', got {header}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) < 3:
                raise DataError(f"{path}: row at line {line_no} has {len(row)} fields")
            try:
                source_label = int(row[0])
            except ValueError:
                raise DataError(f"{path}: bad emotion field at line {line_no}") from None
            if source_label not in FER_REMAP:
                raise LabelError(f"{path}: unknown source label {source_label} at line {line_no}")
            try:
                values = np.array(row[1].split(), dtype=np.int64)
            except ValueError:
                raise DataError(f"{path}: non-integer pixel at line {line_no}") from None
            if values.size != 48 * 48:
                raise DataError(
                    f"{path}: line {line_no} has {values.size} pixel values, expected 2304"
                )
            if values.min() < 0 or values.max() > 255:
                raise DataError(f"{path}: line {line_no} pixel out of [0, 255]")
            gray = values.astype(np.uint8).reshape(48, 48)
            rgb = np.repeat(gray[:, :, None], 3, axis=2)
            samples.append(LabeledSample(rgb, FER_REMAP[source_label], f"row:{line_no}"))
    return DatasetManifest(samples, class_mode, sources=[path])


def load_image_dir(path: str, class_mode: int = 7) -> DatasetManifest:
    """Scan ``<root>/<class-name>/<file>`` folders into a manifest.

    Undecodable files are skipped with a single summary warning; an
    unknown class directory (including contempt in 7-class mode) is an
    error.
    """
    from PIL import Image

    if not os.path.isdir(path):
        raise DataError(f"not a directory: {path}")
    samples = []
    skipped = 0
    for entry in sorted(os.listdir(path)):
        subdir = os.path.join(path, entry)
        if not os.path.isdir(subdir):
            continue
        label = name_to_label(entry, class_mode)
        for fname in sorted(os.listdir(subdir)):
            if not fname.lower().endswith(IMAGE_EXTENSIONS):
                continue
            full = os.path.join(subdir, fname)
            try:
                with Image.open(full) as im:
                    rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
            except Exception:
                skipped += 1
                continue
            samples.append(LabeledSample(rgb, label, full))
    if skipped:
        warnings.warn(f"{path}: skipped {skipped} undecodable image file(s)")
    return DatasetManifest(samples, class_mode, sources=[path])


def make_synthetic_manifest(
    per_class: int, image_size: int, class_mode: int, seed: int
) -> DatasetManifest:
    """Seeded per-class texture patterns: oriented stripes of a
    class-specific period over a class-specific base color, plus a
    little pixel noise. Trivially separable by design."""
    rng = SplitMix64(derive_seed(seed, "synthetic")).numpy_rng()
    palette = np.array(
        [[200, 80, 80], [80, 200, 80], [80, 80, 200], [200, 200, 60],
         [60, 200, 200], [200, 60, 200], [150, 150, 150], [230, 140, 40]],
        dtype=np.float64,
    )
    coords = np.arange(image_size)
    samples = []
    for label in range(class_mode):
        period = 3 + 2 * label
        axis_coord = coords[:, None] if label % 2 == 0 else coords[None, :]
        stripe = np.sin(2 * np.pi * axis_coord / period) * 55.0
        base = palette[label][None, None, :]
        for i in range(per_class):
            noise = rng.uniform(-8, 8, size=(image_size, image_size, 3))
            phase = rng.uniform(0, 2 * np.pi)
            wave = np.sin(2 * np.pi * axis_coord / period + phase) * 55.0
            img = base + (stripe + wave)[..., None] / 2.0 + noise
            img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
            samples.append(LabeledSample(img, label, f"synthetic:{label}:{i}"))
    return DatasetManifest(samples, class_mode, sources=[f"synthetic:{per_class}"],
                           seed=seed)


# -- pixel transforms -------------------------------------------------------------


def _bilinear_sample(img: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    """Sample img (H, W, C) at fractional coordinates with edge replication."""
    h, w = img.shape[:2]
    y0 = np.floor(sy)
    x0 = np.floor(sx)
    fy = (sy - y0)[..., None]
    fx = (sx - x0)[..., None]
    y0c = np.clip(y0, 0, h - 1).astype(np.int64)
    y1c = np.clip(y0 + 1, 0, h - 1).astype(np.int64)
    x0c = np.clip(x0, 0, w - 1).astype(np.int64)
    x1c = np.clip(x0 + 1, 0, w - 1).astype(np.int64)
    top = img[y0c, x0c] * (1.0 - fx) + img[y0c, x1c] * fx
    bot = img[y1c, x0c] * (1.0 - fx) + img[y1c, x1c] * fx
    return top * (1.0 - fy) + bot * fy


def resize_bilinear(image: np.ndarray, target) -> np.ndarray:
    """Bilinear resize with pixel centers at (i + 0.5)/N (corners not aligned).

    uint8 input yields rounded uint8 output; identity targets reproduce
    the input bitwise.
    """
    th, tw = (target, target) if isinstance(target, int) else target
    if th <= 0 or tw <= 0:
        raise ConfigError(f"resize target must be positive, got {(th, tw)}")
    h, w = image.shape[:2]
    src = image.astype(np.float64)
    sy = (np.arange(th) + 0.5) * (h / th) - 0.5
    sx = (np.arange(tw) + 0.5) * (w / tw) - 0.5
    out = _bilinear_sample(src, *np.meshgrid(sy, sx, indexing="ij"))
    if image.dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out.astype(image.dtype)


def normalize(image: np.ndarray) -> T.Tensor:
    """Map 8-bit pixels to [-1, 1]: x = (p/255 - 0.5) / 0.5."""
    x = (image.astype(np.float64) / 255.0 - 0.5) / 0.5
    return T.Tensor(x)


def denormalize(x) -> np.ndarray:
    """Invert normalize back to p/255, snapping to the 8-bit grid.

    The snap is needed for bitwise recovery: for small p the low bits of
    p/255 fall below the precision of (p/255 - 0.5), so the plain affine
    inverse is off by one ulp.
    """
    data = x.data if isinstance(x, T.Tensor) else np.asarray(x)
    return np.rint((data.astype(np.float64) * 0.5 + 0.5) * 255.0) / 255.0


def augment_rotate(image: np.ndarray, angle_deg: float | None = None,
                   rng: SplitMix64 | None = None) -> np.ndarray:
    """Rotate about the image center (bilinear, edge-replicated border).

    With angle_deg=None an angle is drawn uniformly from [-10, +10]
    degrees using `rng`.
    """
    if angle_deg is None:
        if rng is None:
            raise ConfigError("augment_rotate needs an rng to draw a random angle")
        angle_deg = rng.uniform(-10.0, 10.0)
    if angle_deg == 0.0:
        return image.copy()
    h, w = image.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    dx, dy = xs - cx, ys - cy
    sx = cos_t * dx + sin_t * dy + cx
    sy = -sin_t * dx + cos_t * dy + cy
    out = _bilinear_sample(image.astype(np.float64), sy, sx)
    if image.dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out.astype(image.dtype)


def augment_autocontrast(image: np.ndarray) -> np.ndarray:
    """Per channel, linearly remap [min, max] to [0, 255]; constant
    channels pass through unchanged."""
    out = image.astype(np.float64)
    for c in range(image.shape[2]):
        lo = out[:, :, c].min()
        hi = out[:, :, c].max()
        if hi > lo:
            out[:, :, c] = (out[:, :, c] - lo) * (255.0 / (hi - lo))
    if image.dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out.astype(image.dtype)


# -- splitting and balancing --------------------------------------------------------


def split(manifest: DatasetManifest, fractions, seed: int) -> DatasetManifest:
    """Assign train/val/test splits, stratified by class.

    Deterministic under the seed. Augmented samples (if any are present
    already) always land in train: val and test hold originals only.
    """
    f = tuple(float(x) for x in fractions)
    if len(f) != 3 or any(x < 0 for x in f):
        raise ConfigError(f"need 3 non-negative fractions, got {fractions}")
    if abs(sum(f) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions {fractions} do not sum to 1")
    rng = SplitMix64(derive_seed(seed, "split"))
    by_class: dict[int, list[LabeledSample]] = {}
    for s in manifest.samples:
        if s.augmented:
            s.split = "train"
        else:
            by_class.setdefault(s.label, []).append(s)
    for label in sorted(by_class):
        group = by_class[label]
        rng.shuffle(group)
        n = len(group)
        n_train = int(n * f[0] + 0.5)
        n_trval = int(n * (f[0] + f[1]) + 0.5)
        for i, s in enumerate(group):
            s.split = "train" if i < n_train else ("val" if i < n_trval else "test")
    manifest.seed = seed
    return manifest


def balance_classes(manifest: DatasetManifest, seed: int) -> DatasetManifest:
    """Equalize per-class train counts by augmenting minority classes.

    The target is the largest per-class train count. Minority classes
    are topped up by transforming uniformly-sampled originals (rotation
    and autocontrast, each applied with probability 0.5); excess
    generated samples are pruned uniformly at random so the final
    counts are exactly equal. Only the train split is touched.
    """
    rng = SplitMix64(derive_seed(seed, "balance"))
    counts = manifest.class_counts("train")
    if counts.sum() == 0:
        raise DataError("balance_classes: train split is empty")
    original_counts = np.zeros(manifest.class_mode, dtype=np.int64)
    for s in manifest.samples:
        if s.split == "train" and not s.augmented:
            original_counts[s.label] += 1
    target = int(original_counts.max())
    new_samples = list(manifest.samples)
    for label in range(manifest.class_mode):
        need = target - int(counts[label])
        if need < 0:
            raise DataError(
                f"class '{class_name(label)}' already exceeds the target of "
                f"{target} train samples; cannot balance without discarding input"
            )
        if need == 0:
            continue
        originals = [
            s for s in manifest.samples
            if s.split == "train" and s.label == label and not s.augmented
        ]
        if not originals:
            raise DataError(
                f"class '{class_name(label)}' has no train samples to augment"
            )
        order = list(range(len(originals)))
        rng.shuffle(order)
        generated = []
        while len(generated) < need:
            src = originals[order[len(generated) % len(originals)]]
            img = src.image
            ops = []
            if rng.next_float() < 0.5:
                angle = rng.uniform(-10.0, 10.0)
                img = augment_rotate(img, angle)
                ops.append(f"rot({angle:+.2f})")
            if rng.next_float() < 0.5:
                img = augment_autocontrast(img)
                ops.append("auto")
            desc = "+".join(ops) if ops else "copy"
            generated.append(LabeledSample(
                img if ops else img.copy(), label, src.ref,
                provenance=f"augmented:{src.ref}:{desc}", split="train",
            ))
        if len(generated) > need:  # prune surplus uniformly at random
            keep = sorted(rng.sample_indices(len(generated), need))
            generated = [generated[i] for i in keep]
        new_samples.extend(generated)
    return DatasetManifest(new_samples, manifest.class_mode,
                           sources=list(manifest.sources), seed=manifest.seed)


# -- batching ----------------------------------------------------------------------


def prepare_arrays(samples: list[LabeledSample], image_size: int):
    """Resize + normalize a sample list once into dense arrays.

    Returns (images [N, S, S, 3] in the current precision, labels [N]).
    """
    n = len(samples)
    images = np.empty((n, image_size, image_size, 3), dtype=T.get_dtype())
    labels = np.empty(n, dtype=np.int64)
    for i, s in enumerate(samples):
        img = s.image
        if img.shape[:2] != (image_size, image_size):
            img = resize_bilinear(img, image_size)
        images[i] = (img.astype(np.float64) / 255.0 - 0.5) / 0.5
        labels[i] = s.label
    return images, labels


def shuffled_batch_indices(n: int, batch_size: int, rng: SplitMix64,
                           drop_last: bool = True):
    """Yield index arrays covering a fresh permutation of range(n)."""
    if batch_size <= 0:
        raise ConfigError(f"batch_size must be positive, got {batch_size}")
    order = list(range(n))
    rng.shuffle(order)
    for start in range(0, n, batch_size):
        chunk = order[start:start + batch_size]
        if drop_last and len(chunk) < batch_size:
            return
        yield np.asarray(chunk, dtype=np.int64)


def batch_iter(manifest: DatasetManifest, batch_size: int, rng: SplitMix64,
               image_size: int, split_name: str = "train",
               drop_last: bool = True):
    """Shuffled minibatches of (images Tensor [B, S, S, 3], labels [B])."""
    samples = manifest.subset(split_name)
    images, labels = prepare_arrays(samples, image_size)
    for idx in shuffled_batch_indices(len(samples), batch_size, rng, drop_last):
        yield T.Tensor(images[idx]), labels[idx]

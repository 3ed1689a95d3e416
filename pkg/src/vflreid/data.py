"""Vehicle images and feature records, augmentation, T-step sequence building,
synthetic datasets and the tab-separated feature file format."""

from __future__ import annotations

import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np
from scipy import ndimage

from .errors import ContractError, FeatureFileError

AUGMENT_OPS = ("crop", "rotate", "brightness")
MISSING_CAMERA = "-"


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``, e.g. one per worker or query."""
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])


@dataclass
class VehicleImage:
    id: str
    pixels: np.ndarray
    camera: str | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim == 2:
            self.pixels = self.pixels[:, :, None]
        if self.pixels.ndim != 3:
            raise ValueError(f"pixels must be W x H x D, got shape {self.pixels.shape}")
        w, h, d = self.pixels.shape
        if w < 8 or h < 8:
            raise ValueError(f"image must be at least 8x8, got {w}x{h}")
        if d not in (1, 3):
            raise ValueError(f"depth must be 1 or 3, got {d}")
        if self.pixels.min() < 0 or self.pixels.max() > 1:
            raise ValueError("pixel values must lie in [0, 1]")

    @property
    def vector(self) -> np.ndarray:
        return self.pixels.reshape(-1)

    def to_record(self) -> "FeatureRecord":
        return FeatureRecord(self.id, self.vector.copy(), self.camera)


@dataclass
class FeatureRecord:
    id: str
    vector: np.ndarray
    camera: str | None = None

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.vector)):
            raise ValueError(f"feature vector for {self.id!r} has non-finite values")


Item = Union[VehicleImage, FeatureRecord]


def item_array(item: Item) -> np.ndarray:
    return item.pixels if isinstance(item, VehicleImage) else item.vector


# -- augmentation ---------------------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    crop_area: tuple[float, float] = (0.8, 1.0)
    max_rotation: float = 15.0
    brightness: tuple[float, float] = (0.8, 1.2)


def _crop(pixels: np.ndarray, rng: np.random.Generator, area: tuple[float, float]) -> np.ndarray:
    w, h = pixels.shape[:2]
    side = math.sqrt(rng.uniform(*area))
    cw = min(w, max(8, int(round(w * side))))
    ch = min(h, max(8, int(round(h * side))))
    x0 = int(rng.integers(0, w - cw + 1))
    y0 = int(rng.integers(0, h - ch + 1))
    window = pixels[x0 : x0 + cw, y0 : y0 + ch]
    # nearest-neighbour rescale back to w x h
    rows = np.minimum((np.arange(w) * cw) // w, cw - 1)
    cols = np.minimum((np.arange(h) * ch) // h, ch - 1)
    return window[rows][:, cols]


def augment(
    img: VehicleImage,
    ops: Iterable[str],
    rng: np.random.Generator,
    config: AugmentConfig = AugmentConfig(),
) -> VehicleImage:
    """Apply the requested subset of crop / rotate / brightness, in that order."""
    ops = set(ops)
    unknown = ops - set(AUGMENT_OPS)
    if unknown:
        raise ValueError(f"unsupported augmentation(s) {sorted(unknown)}; choose from {AUGMENT_OPS}")
    if not ops:
        return img
    pixels = img.pixels
    if "crop" in ops:
        pixels = _crop(pixels, rng, config.crop_area)
    if "rotate" in ops:
        angle = rng.uniform(-config.max_rotation, config.max_rotation)
        pixels = ndimage.rotate(pixels, angle, axes=(0, 1), reshape=False, order=1, mode="nearest")
    if "brightness" in ops:
        pixels = pixels * rng.uniform(*config.brightness)
    return VehicleImage(img.id, np.clip(pixels, 0.0, 1.0), img.camera)


def _augmented(item: Item, ops, rng, config) -> Item:
    if isinstance(item, VehicleImage):
        return augment(item, ops, rng, config)
    # precomputed features live past the image stage; nothing to augment
    return FeatureRecord(item.id, item.vector.copy(), item.camera)


# -- sequences ----------------------------------------------------------------------


def build_train_sequence(
    records: Sequence[Item],
    T: int,
    rng: np.random.Generator,
    ops: Iterable[str] = AUGMENT_OPS,
    config: AugmentConfig = AugmentConfig(),
) -> list[Item]:
    """T augmented instances drawn from one identity's records.

    Distinct sources are used when the identity has at least T records;
    otherwise sources are drawn with replacement.
    """
    if not records:
        raise ContractError("cannot build a sequence from an identity with no records")
    if T < 1:
        raise ContractError(f"T must be >= 1, got {T}")
    ids = {r.id for r in records}
    if len(ids) != 1:
        raise ContractError(f"records mix identities {sorted(ids)}")
    ops = tuple(ops)
    replace = len(records) < T
    picks = rng.choice(len(records), size=T, replace=replace)
    return [_augmented(records[int(i)], ops, rng, config) for i in picks]


def build_query_sequence(
    item: Item,
    T: int,
    rng: np.random.Generator,
    ops: Iterable[str] = AUGMENT_OPS,
    config: AugmentConfig = AugmentConfig(),
) -> list[Item]:
    """The original at position 0 followed by ``T - 1`` augmented variants."""
    if T < 1:
        raise ContractError(f"T must be >= 1, got {T}")
    ops = tuple(ops)
    return [item] + [_augmented(item, ops, rng, config) for _ in range(T - 1)]


@dataclass
class SequenceBatch:
    """``inputs`` is ``(B, T, *item_shape)``; ``labels`` is ``(B, C)`` one-hot."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0] or self.inputs.shape[0] < 1:
            raise ContractError(f"batch size mismatch: inputs {self.inputs.shape}, labels {self.labels.shape}")

    @property
    def batch_size(self) -> int:
        return self.inputs.shape[0]

    @property
    def time_steps(self) -> int:
        return self.inputs.shape[1]

    @property
    def class_indices(self) -> np.ndarray:
        return self.labels.argmax(axis=1)


def group_by_identity(items: Iterable[Item]) -> dict[str, list[Item]]:
    groups: dict[str, list[Item]] = defaultdict(list)
    for item in items:
        groups[item.id].append(item)
    return dict(groups)


def epoch_batches(
    items: Sequence[Item],
    class_index: dict[str, int],
    T: int,
    batch_size: int,
    rng: np.random.Generator,
    ops: Iterable[str] = AUGMENT_OPS,
    config: AugmentConfig = AugmentConfig(),
) -> list[SequenceBatch]:
    """One epoch of shuffled sequence batches.

    Each identity contributes ``ceil(n_records / T)`` sequences, so every
    record is seen about once per epoch.
    """
    groups = group_by_identity(items)
    ops = tuple(ops)
    jobs = []
    for ident in sorted(groups):
        n_seq = max(1, math.ceil(len(groups[ident]) / T))
        jobs.extend([ident] * n_seq)
    order = rng.permutation(len(jobs))
    num_classes = len(class_index) if class_index else 0
    num_classes = max(num_classes, max(class_index.values()) + 1)
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = [jobs[int(i)] for i in order[start : start + batch_size]]
        seqs = [build_train_sequence(groups[ident], T, rng, ops, config) for ident in chunk]
        inputs = np.stack([np.stack([item_array(x) for x in s]) for s in seqs])
        labels = np.zeros((len(chunk), num_classes))
        labels[np.arange(len(chunk)), [class_index[i] for i in chunk]] = 1.0
        batches.append(SequenceBatch(inputs, labels))
    return batches


# -- synthetic data -----------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    num_identities: int = 10
    images_per_identity: int = 18
    viewpoint_count: int = 3
    noise_scale: float = 0.03
    seed: int = 0
    image_size: int = 16
    depth: int = 1

    def __post_init__(self):
        if self.num_identities < 2:
            raise ValueError("synthetic data needs at least 2 identities")
        if self.viewpoint_count < 1 or self.images_per_identity < 1:
            raise ValueError("viewpoint_count and images_per_identity must be positive")
        if self.image_size < 8 or self.depth not in (1, 3):
            raise ValueError("image_size must be >= 8 and depth 1 or 3")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")


@dataclass
class SyntheticDataset:
    spec: SyntheticSpec
    images: list[VehicleImage]
    viewpoints: list[int] = field(default_factory=list)

    def records(self) -> list[FeatureRecord]:
        return [img.to_record() for img in self.images]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.spec.image_size, self.spec.image_size, self.spec.depth)


def _view_transform(pattern: np.ndarray, view: int, n_views: int) -> np.ndarray:
    """Fixed per-viewpoint distortion: horizontal shift plus an illumination ramp."""
    size = pattern.shape[0]
    shifted = np.roll(pattern, shift=view * max(1, size // 5), axis=1)
    ramp = np.linspace(1.0, 0.75, size) if view % 2 else np.linspace(0.75, 1.0, size)
    gain = 1.0 if n_views == 1 else 0.9 + 0.1 * view / (n_views - 1)
    return shifted * ramp[None, :, None] * gain


def generate_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    """Deterministic toy re-id dataset.

    Each identity has a smooth random base pattern; viewpoint ``v`` (also used
    as the camera tag ``"c{v}"``) applies a fixed shift and illumination ramp;
    every image then gets Gaussian pixel noise of ``noise_scale``.
    Images are assigned to viewpoints round-robin.
    """
    rng = np.random.default_rng(spec.seed)
    size, depth = spec.image_size, spec.depth
    coarse = max(2, size // 4)
    images: list[VehicleImage] = []
    views: list[int] = []
    for ident in range(spec.num_identities):
        low = rng.uniform(0.15, 0.85, size=(coarse, coarse, depth))
        base = ndimage.zoom(low, (size / coarse, size / coarse, 1), order=1, mode="nearest")
        base = np.clip(base[:size, :size], 0.0, 1.0)
        for k in range(spec.images_per_identity):
            v = k % spec.viewpoint_count
            pixels = _view_transform(base, v, spec.viewpoint_count)
            if spec.noise_scale > 0:
                pixels = pixels + rng.normal(0.0, spec.noise_scale, size=pixels.shape)
            images.append(VehicleImage(f"id{ident:03d}", np.clip(pixels, 0.0, 1.0), f"c{v}"))
            views.append(v)
    return SyntheticDataset(spec, images, views)


def split_query_gallery(
    items: Sequence[Item], train_fraction: float = 2 / 3
) -> tuple[list[Item], list[Item], list[Item]]:
    """Split each (identity, camera) group into train and test parts.

    The first image of every test group is a query; the gallery is the whole
    test part, so with cross-camera filtering each query has to be matched
    through a different camera.
    """
    groups: dict[tuple[str, str | None], list[Item]] = defaultdict(list)
    for item in items:
        groups[(item.id, item.camera)].append(item)
    train, query, gallery = [], [], []
    for key in sorted(groups, key=lambda k: (k[0], k[1] or "")):
        group = groups[key]
        n_train = min(len(group) - 1, max(1, int(round(len(group) * train_fraction))))
        train.extend(group[:n_train])
        test = group[n_train:]
        if test:
            query.append(test[0])
            gallery.extend(test)
    return train, query, gallery


# -- feature files -----------------------------------------------------------------


def write_feature_file(path, records: Iterable[Item], image_shape: Sequence[int] | None = None) -> None:
    """Write ``<id>\\t<camera|->\\t<v0>,<v1>,...`` lines (shortest round-trip floats)."""
    lines = []
    if image_shape is not None:
        lines.append("# image_shape=" + ",".join(str(int(s)) for s in image_shape))
    for rec in records:
        if "\t" in rec.id or "\n" in rec.id:
            raise FeatureFileError(f"identity {rec.id!r} contains a tab or newline")
        vec = item_array(rec).reshape(-1)
        cam = rec.camera if rec.camera is not None else MISSING_CAMERA
        lines.append(f"{rec.id}\t{cam}\t" + ",".join(repr(float(v)) for v in vec))
    directory = os.path.dirname(os.fspath(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def load_feature_file(path) -> list[FeatureRecord]:
    records: list[FeatureRecord] = []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FeatureFileError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            ident, cam, values = parts
            if not ident:
                raise FeatureFileError(f"{path}:{lineno}: empty identity")
            try:
                vec = np.array([float(v) for v in values.split(",")], dtype=np.float64)
            except ValueError as exc:
                raise FeatureFileError(f"{path}:{lineno}: bad number ({exc})") from None
            if not np.all(np.isfinite(vec)):
                raise FeatureFileError(f"{path}:{lineno}: non-finite value")
            if width is None:
                width = vec.size
            elif vec.size != width:
                raise FeatureFileError(f"{path}:{lineno}: width {vec.size} differs from {width}")
            records.append(FeatureRecord(ident, vec, None if cam == MISSING_CAMERA else cam))
    return records


def feature_file_image_shape(path) -> tuple[int, ...] | None:
    """The ``# image_shape=W,H,D`` header written by :func:`write_feature_file`, if any."""
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line.startswith("#"):
                return None
            if line.startswith("# image_shape="):
                return tuple(int(s) for s in line.split("=", 1)[1].split(","))
    return None


def records_to_images(records: Sequence[FeatureRecord], image_shape: Sequence[int]) -> list[VehicleImage]:
    shape = tuple(int(s) for s in image_shape)
    return [VehicleImage(r.id, r.vector.reshape(shape), r.camera) for r in records]

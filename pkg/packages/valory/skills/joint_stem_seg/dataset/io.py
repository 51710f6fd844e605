# -*- coding: utf-8 -*-
# ------------------------------------------------------------------------------
#
#   Copyright 2026 Valory AG
#
#   Licensed under the Apache License, Version 2.0 (the "License");
#   you may not use this file except in compliance with the License.
#   You may obtain a copy of the License at
#
#       http://www.apache.org/licenses/LICENSE-2.0
#
#   Unless required by applicable law or agreed to in writing, software
#   distributed under the License is distributed on an "AS IS" BASIS,
#   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#   See the License for the specific language governing permissions and
#   limitations under the License.
#
# ------------------------------------------------------------------------------

"""This module contains the on-disk dataset format, stem-region rendering, splits and resizing.

Layout of a dataset directory:

    meta.json            {"channels": "RGB" | "RGBN", "class_names": [...], "mm_per_pixel": ...}
    images/<id>.png      RGB, or RGBA with NIR in the fourth channel
    labels/<id>.png      8-bit single channel, 0 soil, 1 crop, 2 dicot, 3 grass
    stems/<id>.csv       id,class,x_px,y_px with class crop or dicot
"""

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from packages.valory.skills.joint_stem_seg.metrics import GroundTruthStem
from packages.valory.skills.joint_stem_seg.models import (
    CHANNEL_LAYOUTS,
    PLANT_CLASS_NAMES,
    SplitSpec,
)
from packages.valory.skills.joint_stem_seg.stem_extraction import StemClass
from packages.valory.skills.joint_stem_seg.utils import (
    PathLike,
    atomic_write_bytes,
    atomic_write_text,
    to_json,
)

META_FILE = "meta.json"
IMAGES_DIR = "images"
LABELS_DIR = "labels"
STEMS_DIR = "stems"
STEMS_CSV_HEADER = ("id", "class", "x_px", "y_px")
DEFAULT_STEM_RADIUS = 5
IMAGE_MODES = {3: "RGB", 4: "RGBA"}


class DatasetError(ValueError):
    """A dataset file is missing or holds an invalid value."""


@dataclass(frozen=True)
class DatasetMeta:
    """Dataset-wide facts: ground resolution, channel layout and class names."""

    mm_per_pixel: float = 1.0
    channels: str = "RGBN"
    class_names: Tuple[str, ...] = PLANT_CLASS_NAMES
    num_images: int = 0

    def __post_init__(self) -> None:
        """Validate the metadata."""
        if self.mm_per_pixel <= 0:
            raise ValueError("mm_per_pixel must be positive")
        if self.channels not in CHANNEL_LAYOUTS:
            raise ValueError(f"channels must be one of {sorted(CHANNEL_LAYOUTS)}")
        if tuple(self.class_names) != PLANT_CLASS_NAMES:
            raise ValueError(f"class_names must be {list(PLANT_CLASS_NAMES)}")

    @property
    def num_channels(self) -> int:
        """3 for RGB, 4 for RGB+NIR."""
        return CHANNEL_LAYOUTS[self.channels]

    def to_json(self) -> str:
        """The `meta.json` document."""
        return (
            to_json(
                {
                    "mm_per_pixel": self.mm_per_pixel,
                    "channels": self.channels,
                    "class_names": list(self.class_names),
                },
                indent=2,
            )
            + "\n"
        )


@dataclass(frozen=True, eq=False)
class Sample:
    """One field image: H x W x C pixels, its plant labels and its stem annotations."""

    sample_id: str
    image: np.ndarray
    labels: np.ndarray
    stems: Tuple[GroundTruthStem, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        """Validate shapes, label values and stem positions."""
        if self.image.ndim != 3 or self.image.shape[2] not in IMAGE_MODES:
            raise ValueError(
                f"sample {self.sample_id}: image must be H x W x 3 or 4, got {self.image.shape}"
            )
        if self.labels.shape != self.image.shape[:2]:
            raise ValueError(
                f"sample {self.sample_id}: labels {self.labels.shape} "
                f"do not match image {self.image.shape}"
            )
        if self.labels.size and self.labels.max() >= len(PLANT_CLASS_NAMES):
            raise ValueError(
                f"sample {self.sample_id}: label value {int(self.labels.max())} "
                f"outside 0..{len(PLANT_CLASS_NAMES) - 1}"
            )
        for stem in self.stems:
            if not (0 <= stem.x <= self.width - 1 and 0 <= stem.y <= self.height - 1):
                raise ValueError(
                    f"sample {self.sample_id}: stem at ({stem.x}, {stem.y}) is out of bounds "
                    f"for a {self.width}x{self.height} image"
                )

    @property
    def height(self) -> int:
        """Rows."""
        return int(self.image.shape[0])

    @property
    def width(self) -> int:
        """Columns."""
        return int(self.image.shape[1])


class Split(NamedTuple):
    """Sample ids of the train, validation and test portions."""

    train: List[str]
    val: List[str]
    test: List[str]


def read_png(path: Path) -> np.ndarray:
    """Decode a PNG into an array."""
    try:
        with Image.open(path) as image:
            image.load()
            if image.mode not in ("L", "RGB", "RGBA"):
                raise DatasetError(f"{path}: unsupported PNG mode {image.mode}")
            return np.asarray(image).copy()
    except FileNotFoundError as e:
        raise DatasetError(f"{path}: missing file") from e
    except OSError as e:
        raise DatasetError(f"{path}: unreadable PNG ({e})") from e


def png_bytes(array: np.ndarray) -> bytes:
    """Encode an array as PNG."""
    buffer = io.BytesIO()
    Image.fromarray(array).save(buffer, format="PNG")
    return buffer.getvalue()


def stems_to_csv(sample_id: str, stems: Sequence[GroundTruthStem]) -> str:
    """The stem annotations of one image as CSV with 6-decimal coordinates."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(STEMS_CSV_HEADER)
    for stem in stems:
        writer.writerow([sample_id, stem.stem_class.value, f"{stem.x:.6f}", f"{stem.y:.6f}"])
    return buffer.getvalue()


def _read_stems(path: Path, sample_id: str) -> Tuple[GroundTruthStem, ...]:
    """Parse one stem CSV."""
    try:
        with open(path, newline="", encoding="utf-8") as file:
            reader = csv.DictReader(file)
            if tuple(reader.fieldnames or ()) != STEMS_CSV_HEADER:
                raise DatasetError(
                    f"{path}: header {reader.fieldnames}, expected {list(STEMS_CSV_HEADER)}"
                )
            stems = []
            for line, row in enumerate(reader, start=2):
                if row["id"] != sample_id:
                    raise DatasetError(f"{path}:{line}: id {row['id']!r} in the file of {sample_id!r}")
                try:
                    stem_class = StemClass(row["class"])
                    stems.append(GroundTruthStem(stem_class, float(row["x_px"]), float(row["y_px"])))
                except (TypeError, ValueError) as e:
                    raise DatasetError(f"{path}:{line}: invalid stem {dict(row)} ({e})") from e
            return tuple(stems)
    except FileNotFoundError as e:
        raise DatasetError(f"{path}: missing file") from e


def load_meta(root: PathLike) -> DatasetMeta:
    """Read and validate `meta.json`."""
    path = Path(root) / META_FILE
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        return DatasetMeta(
            mm_per_pixel=float(data["mm_per_pixel"]),
            channels=str(data["channels"]),
            class_names=tuple(data["class_names"]),
        )
    except FileNotFoundError as e:
        raise DatasetError(f"{path}: missing file") from e
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"{path}: invalid metadata ({e})") from e


def load_sample(root: PathLike, sample_id: str, meta: DatasetMeta) -> Sample:
    """Read and validate one sample."""
    root = Path(root)
    image_path = root / IMAGES_DIR / f"{sample_id}.png"
    label_path = root / LABELS_DIR / f"{sample_id}.png"
    stems_path = root / STEMS_DIR / f"{sample_id}.csv"
    image = read_png(image_path)
    if image.ndim != 3 or image.shape[2] != meta.num_channels:
        raise DatasetError(
            f"{image_path}: expected {meta.num_channels} channels ({meta.channels}), "
            f"got shape {image.shape}"
        )
    labels = read_png(label_path)
    if labels.ndim != 2:
        raise DatasetError(f"{label_path}: label mask must be single channel")
    if labels.shape != image.shape[:2]:
        raise DatasetError(f"{label_path}: size {labels.shape} differs from image {image.shape[:2]}")
    bad = labels[labels >= len(PLANT_CLASS_NAMES)]
    if bad.size:
        raise DatasetError(
            f"{label_path}: label value {int(bad[0])} outside 0..{len(PLANT_CLASS_NAMES) - 1}"
        )
    stems = _read_stems(stems_path, sample_id)
    try:
        return Sample(sample_id, image, labels, stems)
    except ValueError as e:
        raise DatasetError(f"{stems_path}: {e}") from e


def load_dataset(root: PathLike) -> Tuple[DatasetMeta, List[Sample]]:
    """Load every sample of a dataset directory, ordered by id."""
    root = Path(root)
    meta = load_meta(root)
    ids: Dict[str, set] = {}
    for directory, suffix in ((IMAGES_DIR, ".png"), (LABELS_DIR, ".png"), (STEMS_DIR, ".csv")):
        folder = root / directory
        if not folder.is_dir():
            raise DatasetError(f"{folder}: missing directory")
        ids[directory] = {path.stem for path in folder.glob(f"*{suffix}")}
    for directory in (LABELS_DIR, STEMS_DIR):
        for unmatched in sorted(ids[IMAGES_DIR] ^ ids[directory]):
            owner = directory if unmatched in ids[directory] else IMAGES_DIR
            raise DatasetError(
                f"{root / owner / unmatched}: id {unmatched!r} has no counterpart "
                f"in {IMAGES_DIR}/, {LABELS_DIR}/ and {STEMS_DIR}/"
            )
    samples = [load_sample(root, sample_id, meta) for sample_id in sorted(ids[IMAGES_DIR])]
    return DatasetMeta(meta.mm_per_pixel, meta.channels, meta.class_names, len(samples)), samples


def save_sample(root: PathLike, sample: Sample) -> None:
    """Atomically write the three files of a sample."""
    root = Path(root)
    atomic_write_bytes(
        root / IMAGES_DIR / f"{sample.sample_id}.png",
        png_bytes(np.ascontiguousarray(sample.image, dtype=np.uint8)),
    )
    atomic_write_bytes(
        root / LABELS_DIR / f"{sample.sample_id}.png",
        png_bytes(np.ascontiguousarray(sample.labels, dtype=np.uint8)),
    )
    atomic_write_text(
        root / STEMS_DIR / f"{sample.sample_id}.csv",
        stems_to_csv(sample.sample_id, sample.stems),
    )


def save_dataset(root: PathLike, meta: DatasetMeta, samples: Sequence[Sample]) -> None:
    """Write a dataset directory."""
    root = Path(root)
    for directory in (IMAGES_DIR, LABELS_DIR, STEMS_DIR):
        (root / directory).mkdir(parents=True, exist_ok=True)
    atomic_write_text(root / META_FILE, meta.to_json())
    for sample in samples:
        save_sample(root, sample)


def render_stem_mask(
    stems: Sequence[GroundTruthStem], shape: Tuple[int, int], radius_px: int = DEFAULT_STEM_RADIUS
) -> np.ndarray:
    """Filled disks x^2 + y^2 <= r^2 around the rounded stem positions; crop wins overlaps."""
    if radius_px < 1:
        raise ValueError(f"radius_px must be at least 1, got {radius_px}")
    height, width = shape
    mask = np.zeros(shape, dtype=np.uint8)
    rows, cols = np.mgrid[0:height, 0:width]
    for stem_class in (StemClass.DICOT, StemClass.CROP):
        for stem in stems:
            if stem.stem_class is not stem_class:
                continue
            cx, cy = np.floor(stem.x + 0.5), np.floor(stem.y + 0.5)
            disk = (cols - cx) ** 2 + (rows - cy) ** 2 <= radius_px**2
            mask[disk] = stem_class.index
    return mask


def render_stem_regions(sample: Sample, radius_px: int = DEFAULT_STEM_RADIUS) -> np.ndarray:
    """The stem-mask training target of a sample: 0 soil, 1 crop stem, 2 dicot stem."""
    return render_stem_mask(sample.stems, (sample.height, sample.width), radius_px)


def split_counts(total: int, spec: SplitSpec) -> Tuple[int, int, int]:
    """Round validation and test sizes half up (at least one each); train takes the rest."""
    if total < 3:
        raise ValueError(f"a split needs at least 3 samples, got {total}")

    def portion(fraction: float) -> int:
        if fraction <= 0:
            return 0
        return max(1, int(np.floor(total * fraction + 0.5)))

    val, test = portion(spec.val), portion(spec.test)
    train = total - val - test
    if train < 1:
        raise ValueError(f"{total} samples leave no training data for split {spec}")
    return train, val, test


def split_dataset(samples: Sequence[Sample], spec: SplitSpec) -> Split:
    """Partition sample ids into train, validation and test, deterministically for the seed."""
    ids = sorted(sample.sample_id for sample in samples)
    if len(set(ids)) != len(ids):
        raise ValueError("sample ids must be unique")
    train, val, _ = split_counts(len(ids), spec)
    order = np.random.default_rng(spec.seed).permutation(len(ids))
    shuffled = [ids[index] for index in order]
    return Split(
        train=sorted(shuffled[:train]),
        val=sorted(shuffled[train : train + val]),
        test=sorted(shuffled[train + val :]),
    )


def select(samples: Sequence[Sample], ids: Sequence[str]) -> List[Sample]:
    """The samples with the given ids, in id order."""
    wanted = set(ids)
    return [sample for sample in samples if sample.sample_id in wanted]


def resize_to(
    sample: Sample, width: int = 512, height: int = 384, multiple: Optional[int] = None
) -> Sample:
    """Resize an image bilinearly and its labels by nearest neighbour, scaling the stems."""
    if multiple is not None and (width % multiple or height % multiple):
        raise ValueError(
            f"target {width}x{height} is not divisible by {multiple}"
        )
    if width < 1 or height < 1:
        raise ValueError(f"target {width}x{height} must be positive")
    if (width, height) == (sample.width, sample.height):
        return sample
    channels = [
        np.asarray(
            Image.fromarray(np.ascontiguousarray(sample.image[:, :, c])).resize(
                (width, height), Image.Resampling.BILINEAR
            )
        )
        for c in range(sample.image.shape[2])
    ]
    labels = np.asarray(
        Image.fromarray(np.ascontiguousarray(sample.labels, dtype=np.uint8)).resize(
            (width, height), Image.Resampling.NEAREST
        )
    )
    scale_x, scale_y = width / sample.width, height / sample.height
    stems = tuple(
        GroundTruthStem(
            stem.stem_class,
            min(stem.x * scale_x, width - 1.0),
            min(stem.y * scale_y, height - 1.0),
        )
        for stem in sample.stems
    )
    return Sample(sample.sample_id, np.stack(channels, axis=2), labels.copy(), stems)

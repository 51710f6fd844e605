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

"""This module contains the extraction of sub-pixel stem positions from the stem mask."""

import csv
import io
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np
from scipy import ndimage

from packages.valory.skills.joint_stem_seg.models import STEM_CLASS_NAMES
from packages.valory.skills.joint_stem_seg.utils import PathLike, atomic_write_text

DETECTIONS_CSV_HEADER = ("image_id", "class", "x_px", "y_px", "confidence", "area_px")
MASK_SUM_TOLERANCE = 1e-6
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class StemClass(Enum):
    """The classes a stem can belong to; grasses carry no stem."""

    CROP = "crop"
    DICOT = "dicot"

    @property
    def index(self) -> int:
        """The channel of this class in the stem mask."""
        return STEM_CLASS_NAMES.index(self.value)

    @classmethod
    def from_index(cls, index: int) -> "StemClass":
        """The class of a stem-mask channel."""
        if not 0 < index < len(STEM_CLASS_NAMES):
            raise ValueError(f"stem-mask channel {index} is not a stem class")
        return cls(STEM_CLASS_NAMES[index])


@dataclass(frozen=True)
class ProbabilityMask:
    """Per-pixel distributions P(y|x) over soil, crop stem and dicot stem, shaped K x H x W."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        """Validate the mask."""
        if self.probs.ndim != 3 or self.probs.shape[0] != len(STEM_CLASS_NAMES):
            raise ValueError(
                f"stem mask must be {len(STEM_CLASS_NAMES)} x H x W, got {self.probs.shape}"
            )
        sums = self.probs.sum(axis=0)
        if sums.size and np.abs(sums - 1.0).max() > MASK_SUM_TOLERANCE:
            raise ValueError("stem mask pixels must sum to 1")

    @property
    def height(self) -> int:
        """Rows."""
        return int(self.probs.shape[1])

    @property
    def width(self) -> int:
        """Columns."""
        return int(self.probs.shape[2])


MaskLike = Union[ProbabilityMask, np.ndarray]


def _probs(mask: MaskLike) -> np.ndarray:
    return mask.probs if isinstance(mask, ProbabilityMask) else np.asarray(mask)


@dataclass(frozen=True)
class Component:
    """A connected set of pixels sharing argmax class `stem_class`, with their P(c|x)."""

    stem_class: StemClass
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        """The number of pixels."""
        return int(self.rows.size)

    @property
    def bounding_box(self) -> Tuple[int, int, int, int]:
        """(min x, min y, max x, max y)."""
        return (
            int(self.cols.min()),
            int(self.rows.min()),
            int(self.cols.max()),
            int(self.rows.max()),
        )


@dataclass(frozen=True)
class StemDetection:
    """An extracted stem: class, sub-pixel (x, y) = (column, row), confidence and region size."""

    stem_class: StemClass
    x: float
    y: float
    confidence: float
    area_px: int
    mm_per_pixel: float = 1.0

    @property
    def position(self) -> Tuple[float, float]:
        """(x, y) in pixels."""
        return self.x, self.y

    @property
    def position_mm(self) -> Tuple[float, float]:
        """(x, y) in millimetres on the ground."""
        return self.x * self.mm_per_pixel, self.y * self.mm_per_pixel


def argmax_mask(mask: MaskLike) -> np.ndarray:
    """Per-pixel most probable class; ties resolve to the lowest class index."""
    return np.argmax(_probs(mask), axis=0).astype(np.uint8)


def connected_components(
    labels: np.ndarray,
    stem_class: StemClass,
    probs: Optional[MaskLike] = None,
) -> List[Component]:
    """Maximal 8-connected pixel sets labeled with `stem_class`.

    Components are ordered by their first pixel in row-major order. Each pixel
    carries P(c|x) from `probs`, or weight 1 when no probabilities are given.
    """
    labeled, count = ndimage.label(
        np.asarray(labels) == stem_class.index, structure=EIGHT_CONNECTED
    )
    if count == 0:
        return []
    flat = labeled.ravel()
    pixels = np.flatnonzero(flat)
    order = np.argsort(flat[pixels], kind="stable")
    pixels = pixels[order]
    bounds = np.flatnonzero(np.diff(flat[pixels])) + 1
    channel = (
        _probs(probs)[stem_class.index].astype(np.float64)
        if probs is not None
        else np.ones(labeled.shape, dtype=np.float64)
    )
    components = []
    for group in np.split(pixels, bounds):
        rows, cols = np.unravel_index(group, labeled.shape)
        components.append(Component(stem_class, rows, cols, channel[rows, cols]))
    components.sort(key=lambda component: component.rows[0] * labeled.shape[1] + component.cols[0])
    return components


def weighted_centroid(component: Component) -> Tuple[float, float]:
    """The probability-weighted mean pixel position (x, y) of a component."""
    if component.size == 0:
        raise ValueError("cannot take the centroid of an empty component")
    total = component.weights.sum()
    if not total > 0:
        raise ValueError("component probabilities must be positive")
    x = float((component.weights * component.cols).sum() / total)
    y = float((component.weights * component.rows).sum() / total)
    return x, y


def extract_stems(
    mask: MaskLike, min_area: int = 3, mm_per_pixel: float = 1.0
) -> List[StemDetection]:
    """Turn a stem mask into stem detections, most confident first.

    Argmax labels are split into connected components per stem class; those
    smaller than `min_area` pixels are dropped and each survivor reports its
    weighted centroid with the mean component probability as confidence.
    """
    if min_area < 1:
        raise ValueError(f"min_area must be at least 1, got {min_area}")
    probs = _probs(mask)
    labels = argmax_mask(probs)
    detections = []
    for stem_class in StemClass:
        for component in connected_components(labels, stem_class, probs):
            if component.size < min_area:
                continue
            x, y = weighted_centroid(component)
            detections.append(
                StemDetection(
                    stem_class=stem_class,
                    x=x,
                    y=y,
                    confidence=float(component.weights.mean()),
                    area_px=component.size,
                    mm_per_pixel=mm_per_pixel,
                )
            )
    detections.sort(key=lambda detection: -detection.confidence)
    return detections


def detections_to_csv(rows: Iterable[Tuple[str, StemDetection]]) -> str:
    """Render (image id, detection) pairs as CSV text."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(DETECTIONS_CSV_HEADER)
    for image_id, detection in rows:
        writer.writerow(
            [
                image_id,
                detection.stem_class.value,
                f"{detection.x:.6f}",
                f"{detection.y:.6f}",
                f"{detection.confidence:.6f}",
                detection.area_px,
            ]
        )
    return buffer.getvalue()


def write_detections_csv(path: PathLike, rows: Iterable[Tuple[str, StemDetection]]) -> None:
    """Atomically write the detections CSV."""
    atomic_write_text(path, detections_to_csv(rows))


def read_detections_csv(
    path: PathLike, mm_per_pixel: float = 1.0
) -> List[Tuple[str, StemDetection]]:
    """Parse a detections CSV back into (image id, detection) pairs."""
    with open(path, newline="", encoding="utf-8") as file:
        reader = csv.DictReader(file)
        if tuple(reader.fieldnames or ()) != DETECTIONS_CSV_HEADER:
            raise ValueError(
                f"{path} has header {reader.fieldnames}, expected {list(DETECTIONS_CSV_HEADER)}"
            )
        rows = []
        for line, record in enumerate(reader, start=2):
            try:
                detection = StemDetection(
                    stem_class=StemClass(record["class"]),
                    x=float(record["x_px"]),
                    y=float(record["y_px"]),
                    confidence=float(record["confidence"]),
                    area_px=int(record["area_px"]),
                    mm_per_pixel=mm_per_pixel,
                )
            except (TypeError, ValueError) as e:
                raise ValueError(f"{path}:{line} is not a valid detection: {e}") from e
            rows.append((record["image_id"], detection))
    return rows

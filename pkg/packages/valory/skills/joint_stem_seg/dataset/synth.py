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

"""This module contains the synthetic field-image generator.

Soil is a low-amplitude noise texture. Crops are large multi-lobed blobs and
dicots small two-lobed blobs, each with its stem at the lobe junction;
grasses are thin strokes without a stem. Label masks and stem annotations are
derived from the same geometry that paints the image.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from packages.valory.skills.joint_stem_seg.dataset.io import (
    DatasetMeta,
    Sample,
    save_dataset,
)
from packages.valory.skills.joint_stem_seg.metrics import GroundTruthStem
from packages.valory.skills.joint_stem_seg.models import (
    CHANNEL_LAYOUTS,
    PLANT_CLASS_NAMES,
    SynthConfig,
)
from packages.valory.skills.joint_stem_seg.stem_extraction import StemClass
from packages.valory.skills.joint_stem_seg.utils import PathLike

_logger = logging.getLogger(__name__)

ID_WIDTH = 5
PLACEMENT_ATTEMPTS = 25
SOIL_COLOUR = (118.0, 92.0, 66.0, 60.0)


class PlantKind(Enum):
    """What the generator paints; the value is the plant label."""

    CROP = 1
    DICOT = 2
    GRASS = 3


PLANT_COLOURS = {
    PlantKind.CROP: (46.0, 168.0, 58.0, 210.0),
    PlantKind.DICOT: (128.0, 176.0, 38.0, 185.0),
    PlantKind.GRASS: (74.0, 128.0, 96.0, 160.0),
}


@dataclass
class ImageAudit:
    """The generator's own count of pixels per plant class for one image."""

    sample_id: str
    class_pixels: List[int]
    stems: int = 0
    rejected_placements: int = 0


@dataclass
class SynthReport:
    """Bookkeeping of one generator run."""

    images: List[ImageAudit] = field(default_factory=list)

    @property
    def class_pixels(self) -> List[int]:
        """Pixels per plant class over all images."""
        totals = [0] * len(PLANT_CLASS_NAMES)
        for audit in self.images:
            totals = [a + b for a, b in zip(totals, audit.class_pixels)]
        return totals


class _Canvas:
    """One image under construction: pixels, labels, stems and the running class counts."""

    def __init__(self, cfg: SynthConfig, rng: np.random.Generator) -> None:
        """Lay down the soil."""
        self.cfg = cfg
        self.rng = rng
        channels = CHANNEL_LAYOUTS[cfg.channels]
        shape = (cfg.height, cfg.width)
        self.rows, self.cols = np.mgrid[0 : cfg.height, 0 : cfg.width].astype(np.float64)
        noise = rng.normal(0.0, cfg.soil_noise, size=(*shape, channels))
        texture = ndimage.gaussian_filter(
            rng.normal(0.0, cfg.soil_noise, size=(*shape, 1)), sigma=(3.0, 3.0, 0.0)
        )
        self.pixels = np.asarray(SOIL_COLOUR[:channels]) + 0.5 * noise + 2.0 * texture
        self.labels = np.zeros(shape, dtype=np.uint8)
        self.counts = [int(self.labels.size), 0, 0, 0]
        self.occupied = np.zeros(shape, dtype=bool)
        self.stems: List[GroundTruthStem] = []
        self.rejected = 0

    def _ellipse(self, cx: float, cy: float, a: float, b: float, angle: float) -> np.ndarray:
        dx, dy = self.cols - cx, self.rows - cy
        u = dx * math.cos(angle) + dy * math.sin(angle)
        v = -dx * math.sin(angle) + dy * math.cos(angle)
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0

    def _disk(self, cx: float, cy: float, radius: float) -> np.ndarray:
        return (self.cols - cx) ** 2 + (self.rows - cy) ** 2 <= radius**2

    def _stem_point(self) -> Tuple[float, float]:
        margin = self.cfg.margin
        x = self.rng.uniform(margin, self.cfg.width - 1 - margin)
        y = self.rng.uniform(margin, self.cfg.height - 1 - margin)
        return x, y

    def crop(self) -> Tuple[np.ndarray, Tuple[float, float]]:
        """Three to five lobes radiating from the stem."""
        x, y = self._stem_point()
        radius = self.rng.uniform(*self.cfg.crop_radius)
        lobes = int(self.rng.integers(3, 6))
        start = self.rng.uniform(0.0, 2.0 * math.pi)
        footprint = self._disk(x, y, 2.0)
        for lobe in range(lobes):
            angle = start + 2.0 * math.pi * lobe / lobes + self.rng.uniform(-0.25, 0.25)
            length = radius * self.rng.uniform(0.8, 1.0)
            footprint |= self._ellipse(
                x + 0.5 * length * math.cos(angle),
                y + 0.5 * length * math.sin(angle),
                0.5 * length,
                0.22 * length,
                angle,
            )
        return footprint, (x, y)

    def dicot(self) -> Tuple[np.ndarray, Tuple[float, float]]:
        """Two opposite lobes meeting at the stem."""
        x, y = self._stem_point()
        radius = self.rng.uniform(*self.cfg.dicot_radius)
        angle = self.rng.uniform(0.0, math.pi)
        footprint = self._disk(x, y, 1.5)
        for side in (0.0, math.pi):
            footprint |= self._ellipse(
                x + 0.5 * radius * math.cos(angle + side),
                y + 0.5 * radius * math.sin(angle + side),
                0.5 * radius,
                0.3 * radius,
                angle + side,
            )
        return footprint, (x, y)

    def grass(self) -> np.ndarray:
        """A thin straight stroke."""
        x, y = self._stem_point()
        length = self.rng.uniform(*self.cfg.grass_length)
        angle = self.rng.uniform(0.0, math.pi)
        ux, uy = math.cos(angle), math.sin(angle)
        dx, dy = self.cols - x, self.rows - y
        along = np.clip(dx * ux + dy * uy, -0.5 * length, 0.5 * length)
        distance = np.hypot(dx - along * ux, dy - along * uy)
        return distance <= self.cfg.grass_width

    def _stem_pixels(self) -> np.ndarray:
        mask = np.zeros(self.labels.shape, dtype=bool)
        for stem in self.stems:
            mask[int(math.floor(stem.y + 0.5)), int(math.floor(stem.x + 0.5))] = True
        return mask

    def place(self, kind: PlantKind) -> bool:
        """Try to add one plant; overlaps are accepted at the configured rate."""
        stems = self._stem_pixels()
        for _ in range(PLACEMENT_ATTEMPTS):
            if kind is PlantKind.GRASS:
                footprint, stem = self.grass(), None
            else:
                footprint, stem = self.crop() if kind is PlantKind.CROP else self.dicot()
            if not footprint.any() or (footprint & stems).any():
                self.rejected += 1
                continue
            if (footprint & self.occupied).any() and self.rng.random() >= self.cfg.overlap_rate:
                self.rejected += 1
                continue
            self.paint(kind, footprint)
            if stem is not None:
                stem_class = StemClass.CROP if kind is PlantKind.CROP else StemClass.DICOT
                self.stems.append(GroundTruthStem(stem_class, *stem))
            return True
        return False

    def paint(self, kind: PlantKind, footprint: np.ndarray) -> None:
        """Paint a plant over whatever lies beneath, keeping the class counts current."""
        replaced = np.bincount(self.labels[footprint], minlength=len(PLANT_CLASS_NAMES))
        for label, count in enumerate(replaced):
            self.counts[label] -= int(count)
        self.counts[kind.value] += int(footprint.sum())
        self.labels[footprint] = kind.value
        self.occupied |= footprint
        colour = np.asarray(PLANT_COLOURS[kind][: self.pixels.shape[2]])
        shade = self.rng.normal(0.0, self.cfg.soil_noise / 3.0, size=(int(footprint.sum()), colour.size))
        self.pixels[footprint] = colour + shade

    def image(self) -> np.ndarray:
        """The 8-bit image."""
        return np.clip(np.rint(self.pixels), 0, 255).astype(np.uint8)


def generate_sample(cfg: SynthConfig, index: int) -> Tuple[Sample, ImageAudit]:
    """Generate one image; the result depends only on the seed and the index."""
    rng = np.random.default_rng([cfg.seed, index])
    canvas = _Canvas(cfg, rng)
    plan = (
        (PlantKind.GRASS, cfg.grasses_per_image),
        (PlantKind.DICOT, cfg.dicots_per_image),
        (PlantKind.CROP, cfg.crops_per_image),
    )
    for kind, (low, high) in plan:
        for _ in range(int(rng.integers(low, high + 1))):
            canvas.place(kind)
    sample_id = f"{index:0{ID_WIDTH}d}"
    sample = Sample(sample_id, canvas.image(), canvas.labels.copy(), tuple(canvas.stems))
    audit = ImageAudit(sample_id, list(canvas.counts), len(canvas.stems), canvas.rejected)
    return sample, audit


def synth_generate(
    cfg: SynthConfig, out_dir: PathLike, logger: Optional[logging.Logger] = None
) -> SynthReport:
    """Generate a whole dataset and write it to `out_dir`."""
    logger = logger or _logger
    report = SynthReport()
    samples = []
    for index in range(cfg.num_images):
        sample, audit = generate_sample(cfg, index)
        samples.append(sample)
        report.images.append(audit)
    meta = DatasetMeta(cfg.mm_per_pixel, cfg.channels, PLANT_CLASS_NAMES, len(samples))
    save_dataset(out_dir, meta, samples)
    totals = dict(zip(PLANT_CLASS_NAMES, report.class_pixels))
    logger.info(
        f"Generated {len(samples)} {cfg.width}x{cfg.height} {cfg.channels} images in {out_dir}; "
        f"class pixels {totals}"
    )
    return report

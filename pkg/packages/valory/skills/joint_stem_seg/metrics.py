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

"""This module contains the evaluation protocol: stem matching, interpolated AP, mAP, MAD and pixel AP."""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from packages.valory.skills.joint_stem_seg.models import (
    PLANT_CLASS_NAMES,
    MatchConfig,
)
from packages.valory.skills.joint_stem_seg.stem_extraction import (
    StemClass,
    StemDetection,
)
from packages.valory.skills.joint_stem_seg.utils import to_json

_logger = logging.getLogger(__name__)

STEM_TASK = "stem"
SEG_TASK = "seg"


@dataclass(frozen=True)
class GroundTruthStem:
    """An annotated stem position (x, y) = (column, row) in pixels."""

    stem_class: StemClass
    x: float
    y: float


@dataclass
class PRCurve:
    """Scored outcomes of one class, ranked by confidence, and the number of ground truths."""

    confidences: np.ndarray
    true_positives: np.ndarray
    num_ground_truths: int

    def __post_init__(self) -> None:
        """Rank the outcomes: confidence descending, ties kept in input order."""
        self.confidences = np.asarray(self.confidences, dtype=np.float64).ravel()
        self.true_positives = np.asarray(self.true_positives, dtype=bool).ravel()
        if self.confidences.shape != self.true_positives.shape:
            raise ValueError("every ranked outcome needs a confidence")
        order = np.argsort(-self.confidences, kind="stable")
        self.confidences = self.confidences[order]
        self.true_positives = self.true_positives[order]

    @classmethod
    def merge(cls, curves: Iterable["PRCurve"]) -> "PRCurve":
        """Pool the rankings of several images into one."""
        curves = list(curves)
        if not curves:
            return cls(np.zeros(0), np.zeros(0, dtype=bool), 0)
        return cls(
            np.concatenate([curve.confidences for curve in curves]),
            np.concatenate([curve.true_positives for curve in curves]),
            sum(curve.num_ground_truths for curve in curves),
        )

    @property
    def recall(self) -> np.ndarray:
        """Recall after each ranked outcome."""
        if self.num_ground_truths < 1:
            raise ValueError("recall is undefined without ground truths")
        return np.cumsum(self.true_positives) / float(self.num_ground_truths)

    @property
    def precision(self) -> np.ndarray:
        """Precision after each ranked outcome."""
        hits = np.cumsum(self.true_positives).astype(np.float64)
        return hits / np.arange(1, hits.size + 1, dtype=np.float64)

    def to_csv(self) -> str:
        """The curve as `recall,precision` rows."""
        lines = ["recall,precision"]
        lines.extend(
            f"{recall:.6f},{precision:.6f}"
            for recall, precision in zip(self.recall, self.precision)
        )
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class MatchOutcome:
    """The verdict on one detection."""

    detection: StemDetection
    true_positive: bool
    distance_mm: Optional[float] = None
    ground_truth: Optional[int] = None


@dataclass
class MatchResult:
    """Outcomes in confidence order and the ground truths they were matched against."""

    outcomes: List[MatchOutcome]
    ground_truths: Sequence[GroundTruthStem]

    def curve(self, stem_class: StemClass) -> PRCurve:
        """The ranked outcomes of one class."""
        outcomes = [o for o in self.outcomes if o.detection.stem_class is stem_class]
        return PRCurve(
            np.array([o.detection.confidence for o in outcomes], dtype=np.float64),
            np.array([o.true_positive for o in outcomes], dtype=bool),
            sum(1 for gt in self.ground_truths if gt.stem_class is stem_class),
        )

    def tp_distances_mm(self, stem_class: Optional[StemClass] = None) -> List[float]:
        """Distances of the true positives, optionally of one class."""
        return [
            o.distance_mm  # type: ignore[misc]
            for o in self.outcomes
            if o.true_positive
            and (stem_class is None or o.detection.stem_class is stem_class)
        ]


def match_detections(
    detections: Sequence[StemDetection],
    ground_truths: Sequence[GroundTruthStem],
    cfg: MatchConfig,
) -> MatchResult:
    """Greedily match detections to ground truths of the same class, most confident first.

    A detection claims its nearest unassigned ground truth when the distance in
    millimetres is below theta; otherwise it is a false positive.
    """
    if cfg.theta_mm <= 0:
        raise ValueError(f"theta must be positive, got {cfg.theta_mm}")
    order = sorted(range(len(detections)), key=lambda i: -detections[i].confidence)
    positions = np.array([[gt.x, gt.y] for gt in ground_truths], dtype=np.float64).reshape(-1, 2)
    assigned = np.zeros(len(ground_truths), dtype=bool)
    classes = [gt.stem_class for gt in ground_truths]
    outcomes = []
    for index in order:
        detection = detections[index]
        candidates = [
            gt
            for gt in range(len(ground_truths))
            if not assigned[gt] and classes[gt] is detection.stem_class
        ]
        if candidates:
            offsets = positions[candidates] - np.array([detection.x, detection.y])
            distances = np.hypot(offsets[:, 0], offsets[:, 1]) * cfg.mm_per_pixel
            nearest = int(np.argmin(distances))
            distance = float(distances[nearest])
            if distance < cfg.theta_mm:
                assigned[candidates[nearest]] = True
                outcomes.append(
                    MatchOutcome(detection, True, distance, candidates[nearest])
                )
                continue
        outcomes.append(MatchOutcome(detection, False))
    return MatchResult(outcomes, ground_truths)


def average_precision(curve: PRCurve) -> float:
    """Area under the all-point interpolated precision-recall curve.

    Interpolated precision at a recall level is the best precision at that or
    any higher recall; every step up in recall contributes its width times
    the interpolated precision there.
    """
    if curve.num_ground_truths < 1:
        raise ValueError("average precision is undefined without ground truths")
    if curve.true_positives.size == 0:
        return 0.0
    recall = curve.recall
    envelope = np.maximum.accumulate(curve.precision[::-1])[::-1]
    previous = np.concatenate([[0.0], recall[:-1]])
    steps = recall > previous
    return math.fsum((recall[steps] - previous[steps]) * envelope[steps])


def mean_average_precision(aps: Sequence[float]) -> float:
    """Arithmetic mean of per-class APs."""
    if not aps:
        raise ValueError("mean average precision needs at least one class")
    return math.fsum(aps) / len(aps)


def mad(tp_distances_mm: Sequence[float]) -> Optional[float]:
    """Mean distance of the true positives; None when there are none."""
    if not tp_distances_mm:
        return None
    return math.fsum(tp_distances_mm) / len(tp_distances_mm)


def pixel_curve(
    probs: np.ndarray, target: np.ndarray, class_index: int, allow_absent: bool = False
) -> PRCurve:
    """Every pixel as a detection scored P(c|x), true exactly where the target is c."""
    probs = np.asarray(probs)
    target = np.asarray(target)
    if probs.ndim != 3 or probs.shape[1:] != target.shape:
        raise ValueError(
            f"probabilities {probs.shape} do not fit the target {target.shape}"
        )
    hits = target == class_index
    if not allow_absent and not hits.any():
        raise ValueError(f"class {class_index} is absent from the target")
    return PRCurve(probs[class_index].ravel(), hits.ravel(), int(hits.sum()))


def pixel_ap(probs: np.ndarray, target: np.ndarray, class_index: int) -> float:
    """Pixel-wise AP of one class in one image."""
    return average_precision(pixel_curve(probs, target, class_index))


@dataclass
class ImagePrediction:
    """What the network predicted for one image."""

    detections: List[StemDetection] = field(default_factory=list)
    plant_probs: Optional[np.ndarray] = None


@dataclass
class EvalReport:
    """Per-class AP, mAP and MAD of the stems, and per-class pixel AP and mAP of the plants."""

    theta_mm: float
    mm_per_pixel: float
    num_images: int
    stem_ap: Dict[str, float] = field(default_factory=dict)
    stem_mad: Dict[str, Optional[float]] = field(default_factory=dict)
    stem_map: Optional[float] = None
    seg_ap: Dict[str, float] = field(default_factory=dict)
    seg_map: Optional[float] = None
    curves: Dict[str, PRCurve] = field(default_factory=dict, repr=False)

    def to_dict(self) -> Dict[str, object]:
        """The report without the curves."""
        return {
            "theta_mm": self.theta_mm,
            "mm_per_pixel": self.mm_per_pixel,
            "num_images": self.num_images,
            STEM_TASK: {"mAP": self.stem_map, "AP": self.stem_ap, "MAD_mm": self.stem_mad},
            SEG_TASK: {"mAP": self.seg_map, "AP": self.seg_ap},
        }

    def to_json(self) -> str:
        """The report as one JSON document."""
        return to_json(self.to_dict(), indent=2)

    def to_table(self) -> str:
        """Aligned text tables: mAP and per-class AP (and MAD for stems), in percent and mm."""

        def percent(value: Optional[float]) -> str:
            return "-" if value is None else f"{100.0 * value:.1f}"

        def millimetres(value: Optional[float]) -> str:
            return "-" if value is None else f"{value:.2f}"

        stem_header = ["stems", "mAP"]
        stem_row = [f"theta={self.theta_mm:g}mm", percent(self.stem_map)]
        for name in self.stem_ap:
            stem_header += [f"{name} AP", f"{name} MAD"]
            stem_row += [percent(self.stem_ap[name]), millimetres(self.stem_mad.get(name))]
        seg_header = ["segmentation", "mAP"] + [f"{name} AP" for name in self.seg_ap]
        seg_row = ["pixel-wise", percent(self.seg_map)] + [
            percent(value) for value in self.seg_ap.values()
        ]
        return f"{_align([stem_header, stem_row])}\n\n{_align([seg_header, seg_row])}\n"


def _align(rows: List[List[str]]) -> str:
    """Left-align the first column and right-align the others."""
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for row in rows:
        cells = [row[0].ljust(widths[0])] + [
            cell.rjust(width) for cell, width in zip(row[1:], widths[1:])
        ]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines)


def evaluate(
    predictions: Mapping[str, ImagePrediction],
    samples: Sequence,
    cfg: MatchConfig,
) -> EvalReport:
    """Evaluate predictions against the annotated samples of a split.

    Stem rankings and pixel rankings are pooled over all images before AP is
    taken; classes without any ground truth in the split are left out.
    """
    report = EvalReport(cfg.theta_mm, cfg.mm_per_pixel, len(samples))
    stem_curves: Dict[StemClass, List[PRCurve]] = {c: [] for c in StemClass}
    distances: Dict[StemClass, List[float]] = {c: [] for c in StemClass}
    for sample in samples:
        prediction = predictions.get(sample.sample_id, ImagePrediction())
        result = match_detections(prediction.detections, sample.stems, cfg)
        for stem_class in StemClass:
            stem_curves[stem_class].append(result.curve(stem_class))
            distances[stem_class].extend(result.tp_distances_mm(stem_class))

    for stem_class in StemClass:
        curve = PRCurve.merge(stem_curves[stem_class])
        if curve.num_ground_truths == 0:
            _logger.warning(f"No {stem_class.value} stems annotated; class left out")
            continue
        report.stem_ap[stem_class.value] = average_precision(curve)
        report.stem_mad[stem_class.value] = mad(distances[stem_class])
        report.curves[f"{STEM_TASK}_{stem_class.value}"] = curve
    if report.stem_ap:
        report.stem_map = mean_average_precision(list(report.stem_ap.values()))

    if samples and all(
        predictions.get(sample.sample_id, ImagePrediction()).plant_probs is not None
        for sample in samples
    ):
        for index, name in enumerate(PLANT_CLASS_NAMES):
            curve = PRCurve.merge(
                pixel_curve(
                    predictions[sample.sample_id].plant_probs,
                    sample.labels,
                    index,
                    allow_absent=True,
                )
                for sample in samples
            )
            if curve.num_ground_truths == 0:
                _logger.warning(f"No {name} pixels in the split; class left out")
                continue
            report.seg_ap[name] = average_precision(curve)
            report.curves[f"{SEG_TASK}_{name}"] = curve
        if report.seg_ap:
            report.seg_map = mean_average_precision(list(report.seg_ap.values()))
    elif samples:
        _logger.warning("Plant probabilities missing for some images; segmentation not evaluated")
    return report

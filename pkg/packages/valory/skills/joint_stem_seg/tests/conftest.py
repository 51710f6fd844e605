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

"""Shared fixtures and helpers of the joint stem segmentation tests."""

from pathlib import Path
from typing import Callable, Iterable, List, Tuple

import numpy as np
import pytest

from packages.valory.skills.joint_stem_seg.autodiff.tensor import (
    Tensor,
    backward,
    numerical_gradient,
)
from packages.valory.skills.joint_stem_seg.dataset.io import DatasetMeta, Sample
from packages.valory.skills.joint_stem_seg.dataset.synth import generate_sample
from packages.valory.skills.joint_stem_seg.metrics import GroundTruthStem
from packages.valory.skills.joint_stem_seg.models import (
    DenseBlockConfig,
    NetworkConfig,
    SynthConfig,
    TrainConfig,
)
from packages.valory.skills.joint_stem_seg.stem_extraction import StemClass

GRADIENT_TOLERANCE = 1e-4
GRADIENT_SEEDS = range(20)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm of the difference over the norm of the larger gradient."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(fn: Callable[[], Tensor], tensors: Iterable[Tensor]) -> List[float]:
    """Compare the analytic gradient of a scalar function with central differences."""
    tensors = list(tensors)
    for tensor in tensors:
        tensor.zero_grad()
    backward(fn())
    errors = []
    for tensor in tensors:
        analytic = tensor.grad if tensor.grad is not None else np.zeros(tensor.shape)
        errors.append(relative_error(analytic, numerical_gradient(fn, tensor)))
    return errors


def random_tensor(
    rng: np.random.Generator, *shape: int, requires_grad: bool = True
) -> Tensor:
    """A 64-bit tensor of standard normal values."""
    return Tensor(rng.standard_normal(shape), requires_grad=requires_grad, dtype=np.float64)


def make_sample(
    sample_id: str = "00000",
    size: Tuple[int, int] = (16, 16),
    channels: int = 4,
    stems: Tuple[GroundTruthStem, ...] = (),
    seed: int = 0,
) -> Sample:
    """A random sample with soil labels except for a crop square and a dicot square."""
    height, width = size
    rng = np.random.default_rng(seed)
    image = rng.integers(0, 256, size=(height, width, channels), dtype=np.uint8)
    labels = np.zeros(size, dtype=np.uint8)
    labels[2:6, 2:6] = 1
    labels[height - 6 : height - 2, width - 6 : width - 2] = 2
    labels[0, width - 1] = 3
    return Sample(sample_id, image, labels, stems)


@pytest.fixture
def rng() -> np.random.Generator:
    """A seeded generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_network_config() -> NetworkConfig:
    """Two levels, one-layer blocks of growth rate 2."""
    return NetworkConfig(
        input_channels=4,
        levels=2,
        dense_block=DenseBlockConfig(num_layers=1, growth_rate=2, bottleneck_width=4),
    )


@pytest.fixture
def tiny_synth_config() -> SynthConfig:
    """A handful of small synthetic images."""
    return SynthConfig(num_images=6, width=32, height=32, margin=6, seed=7)


@pytest.fixture
def tiny_train_config() -> TrainConfig:
    """A short run that validates every epoch."""
    return TrainConfig(batch_size=2, max_epochs=2, val_every=1, seed=3, dtype="float64")


@pytest.fixture
def synthetic_samples(tiny_synth_config: SynthConfig) -> List[Sample]:
    """The samples of the tiny synthetic dataset."""
    return [
        generate_sample(tiny_synth_config, index)[0]
        for index in range(tiny_synth_config.num_images)
    ]


@pytest.fixture
def crop_stem() -> GroundTruthStem:
    """A crop stem in the middle of a 16x16 image."""
    return GroundTruthStem(StemClass.CROP, 8.0, 8.0)


@pytest.fixture
def dataset_meta() -> DatasetMeta:
    """RGB+NIR metadata at 1 mm/px."""
    return DatasetMeta(mm_per_pixel=1.0, channels="RGBN")


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[[str], Path]:
    """Write a YAML run configuration into the temporary directory."""

    def _write(text: str) -> Path:
        path = tmp_path / "run.yaml"
        path.write_text(text, encoding="utf-8")
        return path

    return _write
